//! Parser for a documented subset of the MATPOWER case format.
//!
//! Recognized fields: `mpc.baseMVA`, `mpc.bus`, `mpc.gen`, `mpc.branch`.
//! Other `mpc.*` assignments (version, gencost, names) are skipped. Rows are
//! whitespace-separated numbers, optionally ending in `;`; `%` starts a
//! comment. Column layout follows MATPOWER:
//!
//! * bus:    id type Pd Qd [Gs Bs ...]           (type 1=PQ, 2=PV, 3=slack)
//! * gen:    bus Pg Qg [Qmax Qmin Vg mBase status ...]
//! * branch: from to r x b [rateA rateB rateC tap shift status ...]
//!
//! MW/MVAr columns are converted to per-unit on `baseMVA`. A tap of 0 means
//! nominal (1.0). Bus shunt devices (Gs/Bs) and phase-shifting transformers
//! are not supported and raise a parse error.

use crate::error::{Error, Result};
use crate::network::{Branch, Bus, BusKind, Network};

/// Parses MATPOWER-style case text into a validated [`Network`].
pub fn parse_case(text: &str) -> Result<Network> {
    let raw = RawCase::parse(text)?;
    raw.into_network()
}

struct NumRow {
    line: usize,
    values: Vec<f64>,
}

#[derive(Default)]
struct RawCase {
    base_mva: Option<f64>,
    bus: Vec<NumRow>,
    gen: Vec<NumRow>,
    branch: Vec<NumRow>,
}

impl RawCase {
    fn parse(text: &str) -> Result<Self> {
        let mut case = RawCase::default();
        // Name of the mpc table currently being collected, if any.
        let mut table: Option<String> = None;

        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find('%') {
                Some(p) => &raw_line[..p],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }

            if let Some(name) = table.clone() {
                if line.starts_with("];") || line == "]" {
                    table = None;
                    continue;
                }
                let body = line.trim_end_matches("];").trim_end_matches(';').trim();
                let closes = line.contains("];");
                if !body.is_empty() {
                    let row = parse_row(body, line_no)?;
                    match name.as_str() {
                        "bus" => case.bus.push(row),
                        "gen" => case.gen.push(row),
                        "branch" => case.branch.push(row),
                        _ => {}
                    }
                }
                if closes {
                    table = None;
                }
                continue;
            }

            if let Some(rest) = line.strip_prefix("mpc.") {
                let (name, value) = rest.split_once('=').ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: format!("expected assignment, got {line:?}"),
                })?;
                let name = name.trim();
                let value = value.trim();
                if name == "baseMVA" {
                    let v = value.trim_end_matches(';').trim();
                    case.base_mva = Some(v.parse().map_err(|_| Error::Parse {
                        line: line_no,
                        message: format!("invalid baseMVA value {v:?}"),
                    })?);
                } else if let Some(open_rest) = value.strip_prefix('[') {
                    let tracked = matches!(name, "bus" | "gen" | "branch");
                    let after = open_rest.trim();
                    if after.contains("];") {
                        // Single-line matrix.
                        let body = after.trim_end_matches("];").trim();
                        if tracked && !body.is_empty() {
                            for part in body.split(';') {
                                let part = part.trim();
                                if part.is_empty() {
                                    continue;
                                }
                                let row = parse_row(part, line_no)?;
                                match name {
                                    "bus" => case.bus.push(row),
                                    "gen" => case.gen.push(row),
                                    "branch" => case.branch.push(row),
                                    _ => unreachable!(),
                                }
                            }
                        }
                    } else {
                        table = Some(if tracked {
                            name.to_string()
                        } else {
                            String::new()
                        });
                        if tracked && !after.is_empty() {
                            let row = parse_row(after.trim_end_matches(';'), line_no)?;
                            match name {
                                "bus" => case.bus.push(row),
                                "gen" => case.gen.push(row),
                                "branch" => case.branch.push(row),
                                _ => unreachable!(),
                            }
                        }
                    }
                }
                // Scalar/string assignments other than baseMVA are ignored.
            }
            // Lines outside mpc.* assignments (e.g. "function mpc = case39")
            // are ignored.
        }

        if let Some(name) = table {
            return Err(Error::Parse {
                line: text.lines().count(),
                message: format!("unterminated matrix mpc.{name}"),
            });
        }
        Ok(case)
    }

    fn into_network(self) -> Result<Network> {
        let base = self.base_mva.ok_or(Error::Parse {
            line: 0,
            message: "missing mpc.baseMVA".into(),
        })?;
        if self.bus.is_empty() {
            return Err(Error::Parse {
                line: 0,
                message: "missing or empty mpc.bus table".into(),
            });
        }

        struct GenAgg {
            pg: f64,
            qg: f64,
            vg: Option<f64>,
        }
        let mut gens: std::collections::HashMap<i64, GenAgg> = Default::default();
        for row in &self.gen {
            require_cols(row, 3, "gen")?;
            let status = row.values.get(7).copied().unwrap_or(1.0);
            if status == 0.0 {
                continue;
            }
            let bus = row.values[0] as i64;
            let entry = gens.entry(bus).or_insert(GenAgg {
                pg: 0.0,
                qg: 0.0,
                vg: None,
            });
            entry.pg += row.values[1] / base;
            entry.qg += row.values[2] / base;
            if entry.vg.is_none() {
                entry.vg = row.values.get(5).copied().filter(|v| *v > 0.0);
            }
        }

        let mut buses = Vec::with_capacity(self.bus.len());
        for row in &self.bus {
            require_cols(row, 4, "bus")?;
            let id = row.values[0] as i64;
            let kind_code = row.values[1] as i64;
            let gs = row.values.get(4).copied().unwrap_or(0.0);
            let bs = row.values.get(5).copied().unwrap_or(0.0);
            if gs != 0.0 || bs != 0.0 {
                return Err(Error::Parse {
                    line: row.line,
                    message: format!("bus {id}: bus shunt devices (Gs/Bs) are not supported"),
                });
            }
            let gen = gens.get(&id);
            let kind = match kind_code {
                1 => BusKind::Pq,
                // A PV bus without an in-service generator cannot hold its
                // setpoint; treat it as PQ.
                2 => {
                    if gen.is_some() {
                        BusKind::Pv
                    } else {
                        BusKind::Pq
                    }
                }
                3 => BusKind::Slack,
                other => {
                    return Err(Error::Parse {
                        line: row.line,
                        message: format!("bus {id}: unsupported bus type {other}"),
                    })
                }
            };
            if kind == BusKind::Slack && gen.is_none() {
                return Err(Error::Parse {
                    line: row.line,
                    message: format!("slack bus {id} has no in-service generator"),
                });
            }
            let demand_p = row.values[2] / base;
            let demand_q = row.values[3] / base;
            let (gen_p, gen_q, v_setpoint) = match gen {
                Some(g) => (g.pg, g.qg, g.vg.unwrap_or(1.0)),
                None => (0.0, 0.0, 1.0),
            };
            let is_zero_injection =
                kind == BusKind::Pq && gen.is_none() && demand_p == 0.0 && demand_q == 0.0;
            buses.push(Bus {
                id,
                demand_p,
                demand_q,
                gen_p,
                gen_q,
                is_zero_injection,
                v_setpoint,
                kind,
            });
        }

        let mut branches = Vec::with_capacity(self.branch.len());
        for row in &self.branch {
            require_cols(row, 5, "branch")?;
            let shift = row.values.get(9).copied().unwrap_or(0.0);
            if shift != 0.0 {
                return Err(Error::Parse {
                    line: row.line,
                    message: "phase-shifting transformers are not supported".into(),
                });
            }
            let raw_tap = row.values.get(8).copied().unwrap_or(0.0);
            let tap = if raw_tap == 0.0 { 1.0 } else { raw_tap };
            branches.push(Branch {
                from_bus: row.values[0] as i64,
                to_bus: row.values[1] as i64,
                r: row.values[2],
                x: row.values[3],
                b_sh: row.values[4],
                tap,
                in_service: row.values.get(10).copied().unwrap_or(1.0) != 0.0,
            });
        }

        Network::new(buses, branches, base)
    }
}

fn parse_row(body: &str, line: usize) -> Result<NumRow> {
    let mut values = Vec::new();
    for tok in body.split_whitespace() {
        let tok = tok.trim_end_matches(';').trim_end_matches(',');
        if tok.is_empty() {
            continue;
        }
        values.push(tok.parse::<f64>().map_err(|_| Error::Parse {
            line,
            message: format!("invalid number {tok:?}"),
        })?);
    }
    Ok(NumRow { line, values })
}

fn require_cols(row: &NumRow, n: usize, table: &str) -> Result<()> {
    if row.values.len() < n {
        return Err(Error::Parse {
            line: row.line,
            message: format!(
                "{table} row has {} columns, expected at least {n}",
                row.values.len()
            ),
        });
    }
    Ok(())
}
