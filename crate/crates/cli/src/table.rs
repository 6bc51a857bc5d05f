//! Operating-characteristic CSV.

use std::io::Write;

use anyhow::Result;
use rdcusum::evaluation::{attained_lower_bound, MetricEstimate, OcRow, SweepSpec};
use rdcusum::series::format_float;
use rdcusum::DetectorKind;

pub const OC_HEADER: &[&str] = &[
    "detector",
    "mu",
    "h",
    "prob",
    "target_far",
    "threshold",
    "far",
    "far_ci",
    "e_inf_tau",
    "e_inf_tau_ci",
    "far_censored",
    "wadd",
    "wadd_ci",
    "cadd_1",
    "cadd_1_ci",
    "wadd_additive",
    "delay_censored",
    "pdc_threshold",
    "pdc_direct",
    "pdc_direct_ci",
    "pdc_short_horizon",
    "pdc_short_horizon_ci",
    "pdc_survivors",
    "pdc_renewal",
    "pdc_renewal_ci",
    "lfl_delay_lower_bound",
    "trials",
    "seed",
];

fn pair(m: &MetricEstimate) -> [String; 2] {
    [format_float(m.value), format_float(m.ci_halfwidth)]
}

pub fn write_oc_table<W: Write>(w: W, spec: &SweepSpec, rows: &[OcRow]) -> Result<()> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    out.write_record(OC_HEADER)?;
    let lfl = spec.family.lfl()?;
    for r in rows {
        let p = &r.params;
        let prob = match p.kind() {
            DetectorKind::FractionalSampling { prob } => format_float(prob),
            _ => String::new(),
        };
        let mut rec: Vec<String> = vec![
            p.kind().label().to_string(),
            format_float(p.mu()),
            format_float(p.h()),
            prob,
            r.target_far.map(format_float).unwrap_or_default(),
            format_float(p.threshold()),
        ];
        rec.extend(pair(&r.far.far));
        rec.extend(pair(&r.far.mean_time));
        rec.push(r.far.far.censored_trials.to_string());
        rec.extend(pair(&r.wadd.worst_case));
        rec.extend(pair(&r.wadd.conditional));
        rec.push(r.wadd.additive_term.to_string());
        rec.push(r.wadd.conditional.censored_trials.to_string());
        rec.push(format_float(r.pdc_direct.threshold_used));
        rec.extend(pair(&r.pdc_direct.estimate));
        rec.extend(pair(&r.pdc_direct.short_horizon));
        rec.push(r.pdc_direct.survivors.to_string());
        match &r.pdc_renewal {
            Some(m) => rec.extend(pair(m)),
            None => rec.extend([String::new(), String::new()]),
        }
        rec.push(format_float(attained_lower_bound(r.far.far.value, &lfl, &spec.f)?));
        rec.push(spec.n_trials.to_string());
        rec.push(spec.base_seed.to_string());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
