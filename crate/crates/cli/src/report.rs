//! CSV rows and JSON summaries.

use std::fmt::Write as _;

use mhd_hdg::verify::{rates, LevelResult, FIELD_NAMES};
use serde::Serialize;

use crate::config::RunConfig;

pub const CSV_HEADER: &str = "level,h,cells,dofs,err_L_scaled,err_u,err_p,err_J_scaled,err_b,err_r,\
divinf_u,divinf_b,t_assembly_s,t_solve_s,t_reconstruct_s";

fn timing(t: f64, on: bool) -> f64 {
    if on {
        t
    } else {
        0.0
    }
}

pub fn level_csv(levels: &[LevelResult], timings: bool) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in levels {
        let e = r.report.fields();
        let st = &r.stats;
        writeln!(
            s,
            "{},{:.6e},{},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.3e},{:.3e},{:.6},{:.6},{:.6}",
            r.level,
            r.h,
            r.cells,
            r.dofs,
            e[0],
            e[1],
            e[2],
            e[3],
            e[4],
            e[5],
            r.report.div_u,
            r.report.div_b,
            timing(st.t_assembly, timings),
            timing(st.t_solve, timings),
            timing(st.t_reconstruct, timings),
        )
        .unwrap();
    }
    s
}

/// Rates between consecutive levels, one row per finer level.
pub fn rates_csv(rows: &[(usize, &[LevelResult])]) -> String {
    let mut s = String::from("k,level,h");
    for f in FIELD_NAMES {
        write!(s, ",rate_{f}").unwrap();
    }
    s.push('\n');
    for (k, levels) in rows {
        let table = field_rates(levels);
        for (i, pair) in levels.windows(2).enumerate() {
            write!(s, "{k},{},{:.6e}", pair[1].level, pair[1].h).unwrap();
            for field in &table {
                match field[i] {
                    Some(r) => write!(s, ",{r:.2}").unwrap(),
                    None => s.push_str(",nan"),
                }
            }
            s.push('\n');
        }
    }
    s
}

fn field_rates(levels: &[LevelResult]) -> Vec<Vec<Option<f64>>> {
    let h: Vec<f64> = levels.iter().map(|l| l.h).collect();
    (0..6)
        .map(|i| {
            let e: Vec<f64> = levels.iter().map(|l| l.report.fields()[i]).collect();
            rates(&e, &h)
        })
        .collect()
}

#[derive(Serialize)]
pub struct Timing {
    pub assembly_s: f64,
    pub solve_s: f64,
    pub reconstruct_s: f64,
}

impl Timing {
    pub fn of(r: &LevelResult, on: bool) -> Self {
        Self {
            assembly_s: timing(r.stats.t_assembly, on),
            solve_s: timing(r.stats.t_solve, on),
            reconstruct_s: timing(r.stats.t_reconstruct, on),
        }
    }
}

#[derive(Serialize)]
struct Params {
    re: f64,
    rm: f64,
    kappa: f64,
    alpha1: f64,
    beta1: f64,
    beta2: f64,
    p0: f64,
}

#[derive(Serialize)]
struct Errors {
    #[serde(rename = "L_scaled")]
    l: f64,
    u: f64,
    p: f64,
    #[serde(rename = "J_scaled")]
    j: f64,
    b: f64,
    r: f64,
}

#[derive(Serialize)]
struct Picard {
    iterations: usize,
    converged: bool,
    final_change_u: Option<f64>,
    final_change_b: Option<f64>,
}

#[derive(Serialize)]
struct LevelSummary {
    level: usize,
    h: f64,
    cells: usize,
    dofs: usize,
    condensed_unknowns: usize,
    nnz: usize,
    errors: Errors,
    divinf_u: f64,
    divinf_b: f64,
    timing: Timing,
    picard: Option<Picard>,
}

#[derive(Serialize)]
struct Rates {
    #[serde(rename = "L_scaled")]
    l: Vec<Option<f64>>,
    u: Vec<Option<f64>>,
    p: Vec<Option<f64>>,
    #[serde(rename = "J_scaled")]
    j: Vec<Option<f64>>,
    b: Vec<Option<f64>>,
    r: Vec<Option<f64>>,
}

#[derive(Serialize)]
pub struct RunSummary {
    case: &'static str,
    variant: String,
    k: usize,
    rhat_bc: String,
    params: Params,
    levels: Vec<LevelSummary>,
    rates: Rates,
    divinf_u_max: f64,
    divinf_b_max: f64,
    timing_total: Timing,
    complete: bool,
    failure: Option<String>,
}

impl RunSummary {
    pub fn new(
        cfg: &RunConfig,
        variant: mhd_hdg::Variant,
        k: usize,
        levels: &[LevelResult],
        failure: Option<String>,
    ) -> Self {
        let p = &cfg.params;
        let [l, u, pr, j, b, r]: [Vec<Option<f64>>; 6] = field_rates(levels).try_into().unwrap();
        let sum = |f: fn(&LevelResult) -> f64| timing(levels.iter().map(f).sum(), cfg.timings);
        let converged = levels.iter().all(|l| l.converged());
        Self {
            case: cfg.case.as_str(),
            variant: variant_name(variant).to_string(),
            k,
            rhat_bc: match cfg.rhat_bc {
                mhd_hdg::RhatBc::StrongZero => "strong-zero",
                mhd_hdg::RhatBc::NormalConstraint => "normal-constraint",
            }
            .to_string(),
            params: Params {
                re: p.re,
                rm: p.rm,
                kappa: p.kappa,
                alpha1: p.alpha1,
                beta1: p.beta1,
                beta2: p.beta2,
                p0: cfg.p0,
            },
            levels: levels
                .iter()
                .map(|r| {
                    let e = r.report.fields();
                    LevelSummary {
                        level: r.level,
                        h: r.h,
                        cells: r.cells,
                        dofs: r.dofs,
                        condensed_unknowns: r.stats.n_free,
                        nnz: r.stats.nnz,
                        errors: Errors { l: e[0], u: e[1], p: e[2], j: e[3], b: e[4], r: e[5] },
                        divinf_u: r.report.div_u,
                        divinf_b: r.report.div_b,
                        timing: Timing::of(r, cfg.timings),
                        picard: r.picard.as_ref().map(|h| Picard {
                            iterations: h.iterations,
                            converged: h.converged,
                            final_change_u: h.change_u.last().copied(),
                            final_change_b: h.change_b.last().copied(),
                        }),
                    }
                })
                .collect(),
            rates: Rates { l, u, p: pr, j, b, r },
            divinf_u_max: levels.iter().map(|r| r.report.div_u).fold(0.0, f64::max),
            divinf_b_max: levels.iter().map(|r| r.report.div_b).fold(0.0, f64::max),
            timing_total: Timing {
                assembly_s: sum(|r| r.stats.t_assembly),
                solve_s: sum(|r| r.stats.t_solve),
                reconstruct_s: sum(|r| r.stats.t_reconstruct),
            },
            complete: failure.is_none() && converged && levels.len() == cfg.levels.len(),
            failure,
        }
    }
}

pub fn variant_name(v: mhd_hdg::Variant) -> &'static str {
    match v {
        mhd_hdg::Variant::Hdg => "hdg",
        mhd_hdg::Variant::Ehdg => "ehdg",
    }
}

#[derive(Serialize)]
struct VariantLevel {
    dofs: usize,
    divinf_u: f64,
    divinf_b: f64,
    err_u: f64,
    timing: Timing,
}

#[derive(Serialize)]
struct CompareLevel {
    level: usize,
    cells: usize,
    reduction_pct: f64,
    hdg: VariantLevel,
    ehdg: VariantLevel,
}

#[derive(Serialize)]
pub struct CompareSummary {
    case: &'static str,
    k: usize,
    levels: Vec<CompareLevel>,
}

fn variant_level(r: &LevelResult, on: bool) -> VariantLevel {
    VariantLevel {
        dofs: r.dofs,
        divinf_u: r.report.div_u,
        divinf_b: r.report.div_b,
        err_u: r.report.err_u,
        timing: Timing::of(r, on),
    }
}

pub fn compare(cfg: &RunConfig, k: usize, hdg: &[LevelResult], ehdg: &[LevelResult]) -> (String, CompareSummary) {
    let mut csv = String::from(
        "level,cells,dofs_hdg,dofs_ehdg,reduction_pct,\
t_assembly_hdg_s,t_solve_hdg_s,t_reconstruct_hdg_s,t_assembly_ehdg_s,t_solve_ehdg_s,t_reconstruct_ehdg_s\n",
    );
    let mut levels = Vec::new();
    for (a, b) in hdg.iter().zip(ehdg) {
        let red = mhd_hdg::spaces::reduction_percent(a.dofs, b.dofs);
        let (ta, tb) = (Timing::of(a, cfg.timings), Timing::of(b, cfg.timings));
        writeln!(
            csv,
            "{},{},{},{},{:.2},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            a.level,
            a.cells,
            a.dofs,
            b.dofs,
            red,
            ta.assembly_s,
            ta.solve_s,
            ta.reconstruct_s,
            tb.assembly_s,
            tb.solve_s,
            tb.reconstruct_s
        )
        .unwrap();
        levels.push(CompareLevel {
            level: a.level,
            cells: a.cells,
            reduction_pct: red,
            hdg: variant_level(a, cfg.timings),
            ehdg: variant_level(b, cfg.timings),
        });
    }
    (csv, CompareSummary { case: cfg.case.as_str(), k, levels })
}
