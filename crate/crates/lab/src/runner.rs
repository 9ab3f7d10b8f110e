//! Dispatch of the four experiment kinds.

use std::collections::BTreeMap;

use ldlab_core::ldp::{
    check_anticlustering, check_truncated_sum, estimate_ratio, ConditionParams, ConditionSuite, RatioParams,
    References, Side,
};
use ldlab_core::models::Variant;
use ldlab_core::regen::{
    build_minorization, check_drift, default_small_set, simulate_split_chain, tau_a_tail, verify_regeneration_ldp, DriftParams,
    RegenParams,
};
use ldlab_core::rng::StreamKey;
use ldlab_core::theory::{
    b_plus_by_differencing, b_plus_closed_form, goldie_c_plus, self, log_grid, model_mean, ConstantEstimate,
    CurveConfig, LimitParams, MarginalTail, Method, RegionParams, RegionRule, SeriesParams, TauBound,
};
use ldlab_core::{Error, Executor, ModelSpec};
use serde_json::json;

use crate::config::{ConfigError, ExperimentConfig, Kind};
use crate::report::{
    num, Check, NamedConstant, ReportBundle, Status, Summary, Table, CONDITION_COLUMNS, CONSTANT_COLUMNS,
    CYCLE_LENGTH_COLUMNS, CYCLE_TAIL_COLUMNS, DIFF_COLUMNS, RATIO_COLUMNS, REGEN_COLUMNS, TAU_COLUMNS, TRACE_COLUMNS,
};

// Seed phases of the sub-computations.
const PHASE_SERIES: u64 = 0x5e51;
const PHASE_SET: u64 = 0x5e7;
const PHASE_CYCLES: u64 = 0xc7c1;
const PHASE_DRIFT: u64 = 0xd71f;
const PHASE_DIFF: u64 = 0xd1ff;
const PHASE_TAU: u64 = 0x7a0;

pub(crate) struct Outcome {
    pub constants: Vec<NamedConstant>,
    pub checks: Vec<Check>,
    pub deviations: BTreeMap<String, f64>,
    pub details: serde_json::Value,
    pub notes: Vec<String>,
    pub errors: Vec<String>,
    pub tables: Vec<Table>,
}

impl Outcome {
    fn new() -> Self {
        Outcome {
            constants: Vec::new(),
            checks: Vec::new(),
            deviations: BTreeMap::new(),
            details: json!({}),
            notes: Vec::new(),
            errors: Vec::new(),
            tables: Vec::new(),
        }
    }

    fn constant(&mut self, name: &str, c: &ConstantEstimate) {
        self.constants.push(NamedConstant {
            name: name.into(),
            value: c.value,
            ci_halfwidth: c.ci_halfwidth,
            method: method_name(c.method).into(),
        });
    }

    fn value(&mut self, name: &str, value: f64, halfwidth: f64, method: &str) {
        self.constants.push(NamedConstant { name: name.into(), value, ci_halfwidth: halfwidth, method: method.into() });
    }

    fn check(&mut self, name: String, pass: bool, value: f64, target: f64, tolerance: f64, detail: String) {
        self.checks.push(Check { name, pass, value, target, tolerance, detail });
    }

    fn detail(&mut self, key: &str, value: serde_json::Value) {
        self.details.as_object_mut().unwrap().insert(key.into(), value);
    }
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::ClosedForm => "closed_form",
        Method::McExpectation => "mc_expectation",
        Method::TailRatio => "tail_ratio",
        Method::TailRatioDiff => "tail_ratio_diff",
    }
}

fn series(cfg: &ExperimentConfig) -> SeriesParams {
    SeriesParams {
        reps: cfg.constants.series_reps,
        seed: StreamKey::phase(cfg.seed, PHASE_SERIES),
        ..SeriesParams::default()
    }
}

fn limit(cfg: &ExperimentConfig) -> LimitParams {
    LimitParams { series: series(cfg), diff_reps: cfg.constants.diff_reps, x_grid: cfg.constants.x_grid.clone() }
}

/// Closed-form marginal tail, or the Goldie form with an estimated constant.
fn marginal<E: Executor>(cfg: &ExperimentConfig, out: &mut Outcome, exec: &E) -> ldlab_core::Result<MarginalTail> {
    match MarginalTail::closed(&cfg.model) {
        Ok(t) => Ok(t),
        Err(Error::Unsupported(_)) => {
            let plain = ModelSpec { variant: cfg.model.variant.clone(), reflected: false };
            let c = goldie_c_plus(&plain, &series(cfg), exec)?;
            out.constant("goldie_c_plus", &c);
            let t = MarginalTail::calibrated(&plain, &c)?;
            Ok(MarginalTail { model: cfg.model.clone(), ..t })
        }
        Err(e) => Err(e),
    }
}

fn rule(cfg: &ExperimentConfig) -> RegionRule {
    cfg.rule.unwrap_or_else(|| RegionRule::for_model(&cfg.model))
}

/// Lower region edge at `n`, scaled by the marginal scale.
fn lower_edge(cfg: &ExperimentConfig, tail: &MarginalTail, n: usize) -> ldlab_core::Result<f64> {
    let mut params = cfg.region.clone();
    if cfg.auto_scale {
        params.tail_scale = tail.scale();
    }
    match theory::lower_edge(tail.alpha, n, rule(cfg), &params) {
        Ok(b) => Ok(b),
        // Boundary exponents: fall back to the generic n^{1/α + δ} edge.
        Err(Error::UnsupportedBoundary { .. }) | Err(Error::IllPosed(_)) => {
            Ok(params.tail_scale * (n as f64).powf(1.0 / tail.alpha.min(2.0) + params.delta))
        }
        Err(e) => Err(e),
    }
}

/// Region parameters with a `P(τ_A > n_max)` estimate filled in when the
/// Markov-atom rule needs one. With no surviving chain the upper bound is
/// used, which keeps `c_n` finite and conservative.
fn atom_region<E: Executor>(
    cfg: &ExperimentConfig,
    alpha: f64,
    out: &mut Outcome,
    exec: &E,
) -> ldlab_core::Result<RegionParams> {
    let mut params = cfg.region.clone();
    if rule(cfg) != RegionRule::MarkovAtom || params.tau.is_some() || alpha <= 1.0 {
        return Ok(params);
    }
    let set = match cfg.regen.small_set {
        Some(s) => s,
        None => default_small_set(&cfg.model, StreamKey::phase(cfg.seed, PHASE_SET))?,
    };
    let minor = build_minorization(&cfg.model, set, cfg.regen.grid_cells)?;
    let n = *cfg.n_grid.iter().max().unwrap();
    let tt = tau_a_tail(&cfg.model, &minor, n, cfg.reps, StreamKey::phase(cfg.seed, PHASE_TAU), exec)?;
    let prob = if tt.zero_hits { tt.upper } else { tt.prob };
    out.detail("tau_bound", json!({ "n": n, "prob": tt.prob, "upper": tt.upper, "used": prob }));
    params.tau = Some(TauBound { n, prob });
    Ok(params)
}

fn references<E: Executor>(cfg: &ExperimentConfig, out: &mut Outcome, exec: &E) -> ldlab_core::Result<References> {
    let refs = References::estimated(&cfg.model, &limit(cfg), cfg.constants.mean_reps, exec)?;
    out.value("tail_constant", refs.tail.constant, refs.tail.constant_halfwidth, "marginal");
    if let Some(m) = refs.mean {
        out.value("mean", m.value, m.ci_halfwidth, if m.exact { "closed_form" } else { "mc_expectation" });
    }
    if let Some(b) = &refs.b_plus {
        out.constant("b_plus", b);
    }
    if let Some(b) = &refs.b_minus {
        out.constant("b_minus", b);
    }
    Ok(refs)
}

fn run_ratio<E: Executor>(cfg: &ExperimentConfig, out: &mut Outcome, exec: &E) -> ldlab_core::Result<()> {
    let refs = references(cfg, out, exec)?;
    let region = atom_region(cfg, refs.tail.alpha, out, exec)?;
    let params = RatioParams {
        n_grid: cfg.n_grid.clone(),
        x_grid: cfg.x_grid.clone(),
        reps: cfg.reps,
        seed: cfg.seed,
        rule: cfg.rule,
        region,
        auto_scale: cfg.auto_scale,
        min_hits: cfg.min_hits,
    };
    let table = estimate_ratio(&cfg.model, &params, &refs, exec)?;
    let mut t = Table::new("ratio", RATIO_COLUMNS);
    for r in &table.rows {
        t.push(vec![
            r.n.to_string(),
            num(r.x),
            num(r.x_over_bn),
            r.side.name().into(),
            r.in_region.to_string(),
            r.hits.to_string(),
            r.reps.to_string(),
            num(r.denom),
            num(r.denom_band),
            num(r.ratio),
            num(r.ci_lo),
            num(r.ci_hi),
            num(r.b_ref),
            num(r.b_ref_halfwidth),
        ]);
    }
    out.tables.push(t);
    let (floor, widths) = (cfg.checks.floor, cfg.checks.widths);
    for &n in &cfg.n_grid {
        for side in [Side::Right, Side::Left] {
            let rows: Vec<_> = table.side(side).filter(|r| r.n == n && r.in_region && r.b_ref.is_finite()).collect();
            if rows.is_empty() {
                continue;
            }
            let key = format!("{}_n{n}", side.name());
            let worst = rows.iter().map(|r| (r.ratio - r.b_ref).abs()).fold(0.0, f64::max);
            out.deviations.insert(key.clone(), worst);
            let failing = rows.iter().filter(|r| !r.within(floor, widths)).count();
            out.check(
                format!("ratio_{key}"),
                failing == 0,
                worst,
                rows[0].b_ref,
                floor,
                format!("{failing} of {} in-region points outside max({floor}, {widths} CI)", rows.len()),
            );
            match table.plateau(n, side) {
                Ok((v, hw)) => out.value(&format!("plateau_{key}"), v, hw, "tail_ratio"),
                Err(e) => out.notes.push(format!("no plateau for {key}: {e}")),
            }
        }
    }
    out.detail("regions", serde_json::to_value(&table.regions).unwrap());
    out.detail("mean_used", json!(table.mean_used));
    out.notes.extend(table.notes.iter().cloned());
    Ok(())
}

fn suite_rows(s: &ConditionSuite, t: &mut Table, trace: &mut Table) {
    for r in &s.reports {
        let p = r.p.map(num).unwrap_or_default();
        t.push(vec![
            r.tag.name().into(),
            r.k.to_string(),
            p.clone(),
            num(r.statistic),
            num(r.threshold),
            r.pass.to_string(),
            r.bound.map(num).unwrap_or_default(),
        ]);
        for tp in &r.trace {
            trace.push(vec![
                r.tag.name().into(),
                r.k.to_string(),
                p.clone(),
                num(tp.x),
                num(tp.value),
                tp.count.to_string(),
                tp.trials.to_string(),
            ]);
        }
    }
}

fn is_markov(model: &ModelSpec) -> bool {
    !matches!(model.variant, Variant::Iid { .. } | Variant::Ma { .. })
}

fn run_conditions<E: Executor>(cfg: &ExperimentConfig, out: &mut Outcome, exec: &E) -> ldlab_core::Result<()> {
    let tail = marginal(cfg, out, exec)?;
    let c = &cfg.conditions;
    let x_grid = if c.x_grid.is_empty() {
        let b = lower_edge(cfg, &tail, c.n)?;
        vec![b, 2.0 * b, 4.0 * b]
    } else {
        c.x_grid.clone()
    };
    let params = ConditionParams {
        k_grid: c.k_grid.clone(),
        schedules: cfg.schedules,
        n: c.n,
        x_grid: x_grid.clone(),
        reps: cfg.reps,
        seed: cfg.seed,
        min_hits: cfg.min_hits,
    };
    out.detail("x_grid", json!(x_grid));
    let mut t = Table::new("conditions", CONDITION_COLUMNS);
    let mut trace = Table::new("conditions_trace", TRACE_COLUMNS);
    let suites: [(&str, ldlab_core::Result<ConditionSuite>); 2] = [
        ("anticlustering", check_anticlustering(&cfg.model, &params, exec)),
        ("truncated_sum", check_truncated_sum(&cfg.model, &params, &tail, exec)),
    ];
    for (name, s) in suites {
        match s {
            Ok(s) => {
                suite_rows(&s, &mut t, &mut trace);
                let stats: Vec<f64> = s.reports.iter().map(|r| r.statistic).collect();
                out.check(
                    format!("{name}_decreasing"),
                    s.strictly_decreasing,
                    *stats.last().unwrap_or(&f64::NAN),
                    f64::NAN,
                    0.0,
                    format!("statistics over k = {:?}: {:?}", c.k_grid, stats),
                );
                out.notes.extend(s.notes.iter().map(|n| format!("{name}: {n}")));
            }
            Err(e) => out.errors.push(format!("{name}: {e}")),
        }
    }
    if is_markov(&cfg.model) {
        let p_grid = if c.drift_p.is_empty() { vec![tail.alpha / 2.0] } else { c.drift_p.clone() };
        let dp = DriftParams {
            probe_reps: c.probe_reps,
            probes: Vec::new(),
            atom_proxy: cfg.regen.small_set,
            seed: StreamKey::phase(cfg.seed, PHASE_DRIFT),
        };
        match check_drift(&cfg.model, &p_grid, &dp, exec) {
            Ok(reports) => {
                for d in &reports {
                    let p = d.report.p.unwrap();
                    t.push(vec![
                        "drift".into(),
                        d.report.k.to_string(),
                        num(p),
                        num(d.report.statistic),
                        num(d.report.threshold),
                        d.report.pass.to_string(),
                        num(d.b),
                    ]);
                    for tp in &d.report.trace {
                        trace.push(vec![
                            "drift".into(),
                            d.report.k.to_string(),
                            num(p),
                            num(tp.x),
                            num(tp.value),
                            tp.count.to_string(),
                            tp.trials.to_string(),
                        ]);
                    }
                    out.check(
                        format!("drift_p{}", num(p)),
                        d.report.pass,
                        d.report.statistic,
                        1.0,
                        0.0,
                        format!("beta = {} (se {}), b = {}", num(d.beta), num(d.beta_se), num(d.b)),
                    );
                }
            }
            Err(e) => out.errors.push(format!("drift: {e}")),
        }
    }
    out.tables.push(t);
    out.tables.push(trace);
    Ok(())
}

fn run_regen<E: Executor>(cfg: &ExperimentConfig, out: &mut Outcome, exec: &E) -> ldlab_core::Result<()> {
    let model = &cfg.model;
    let set = match cfg.regen.small_set {
        Some(s) => s,
        None => default_small_set(model, StreamKey::phase(cfg.seed, PHASE_SET))?,
    };
    let minor = build_minorization(model, set, cfg.regen.grid_cells)?;
    out.value("epsilon", minor.epsilon, 0.0, "grid_integral");
    out.detail("small_set", json!({ "lo": set.lo, "hi": set.hi, "lag": minor.lag }));
    let refs = references(cfg, out, exec)?;
    let b = refs
        .b_plus
        .as_ref()
        .map(|c| c.value)
        .ok_or_else(|| Error::Unsupported("no b+ reference for this model".into()))?;
    let mean = refs.mean.map(|m| m.value).unwrap_or(0.0);
    let n_top = *cfg.n_grid.iter().max().unwrap();
    let x_grid = if cfg.regen.x_grid.is_empty() {
        let e = lower_edge(cfg, &refs.tail, n_top)?;
        vec![e, 2.0 * e, 4.0 * e, 8.0 * e]
    } else {
        cfg.regen.x_grid.clone()
    };
    let params = RegenParams {
        n_grid: cfg.n_grid.clone(),
        x_grid: x_grid.clone(),
        reps: cfg.reps,
        seed: cfg.seed,
        pi_steps: cfg.regen.pi_steps,
    };
    let report = verify_regeneration_ldp(model, &minor, &refs.tail, mean, b, &params, exec)?;
    let mut t = Table::new("regen", REGEN_COLUMNS);
    let mut identity_worst: f64 = 0.0;
    let mut remainder_ok = true;
    for r in &report.rows {
        t.push(vec![
            r.n.to_string(),
            num(r.x),
            num(r.cycle_ratio),
            num(r.cycle_se),
            r.cycle_hits.to_string(),
            num(r.cycle_ref),
            num(r.int_ratio),
            num(r.int_ref),
            num(r.direct_ratio),
            r.direct_hits.to_string(),
            num(r.remainder),
            num(r.remainder_bound),
        ]);
        if r.int_ratio.is_finite() {
            identity_worst = identity_worst.max(r.identity_error() / r.direct_ratio.abs().max(1e-300));
        }
        remainder_ok &= r.remainder <= r.remainder_bound;
    }
    out.tables.push(t);
    let mut tau = Table::new("tau_tail", TAU_COLUMNS);
    for tt in &report.tau_tail {
        tau.push(vec![tt.n.to_string(), num(tt.prob), num(tt.upper), tt.hits.to_string(), tt.reps.to_string()]);
    }
    out.tables.push(tau);
    out.value("tau_mean", report.tau_mean, report.tau_mean_halfwidth, "cycle_mean");
    out.value("pi_hat", report.pi_hat, report.pi_halfwidth, "coin_average");
    out.value("kac", report.kac, report.kac_halfwidth, "product");
    let w = cfg.checks.widths;
    out.check(
        "kac_identity".into(),
        report.kac_within(w),
        report.kac,
        1.0,
        w * report.kac_halfwidth,
        format!("E tau = {}, pi = {}", num(report.tau_mean), num(report.pi_hat)),
    );
    out.check(
        "consistency_identity".into(),
        identity_worst <= 1e-9,
        identity_worst,
        0.0,
        1e-9,
        "relative error of (ii) x (i) against the direct ratio".into(),
    );
    out.check(
        "remainder_bound".into(),
        remainder_ok,
        f64::NAN,
        f64::NAN,
        0.0,
        "r(x) <= P(tau > n) / (n P(|X| > x)) at every grid point".into(),
    );
    let [lo, hi] = cfg.checks.cycle_band;
    for &n in &cfg.n_grid {
        match report.cycle_plateau(n) {
            Ok((v, hw)) => {
                out.value(&format!("cycle_plateau_n{n}"), v, hw, "tail_ratio");
                out.check(
                    format!("cycle_plateau_n{n}"),
                    (lo..=hi).contains(&v),
                    v,
                    1.0,
                    hi - 1.0,
                    format!("table (i) plateau over E tau b+ in [{lo}, {hi}]"),
                );
            }
            Err(e) => out.check(format!("cycle_plateau_n{n}"), false, f64::NAN, 1.0, hi - 1.0, e.to_string()),
        }
    }
    out.notes.extend(report.notes.iter().cloned());
    // Cycle summary from one long split path.
    let cs = simulate_split_chain(model, &minor, cfg.regen.pi_steps, StreamKey::phase(cfg.seed, PHASE_CYCLES), 0)?;
    let mut hist: BTreeMap<usize, u64> = BTreeMap::new();
    for c in &cs.cycles {
        *hist.entry(c.len).or_default() += 1;
    }
    let mut lens = Table::new("cycle_lengths", CYCLE_LENGTH_COLUMNS);
    for (l, c) in &hist {
        lens.push(vec![l.to_string(), c.to_string()]);
    }
    out.tables.push(lens);
    let mut tails = Table::new("cycle_tail", CYCLE_TAIL_COLUMNS);
    let total = cs.cycles.len() as u64;
    for &x in &x_grid {
        let hits = cs.cycles.iter().filter(|c| c.sum - mean * c.len as f64 > x).count() as u64;
        tails.push(vec![num(x), hits.to_string(), total.to_string(), num(hits as f64 / total.max(1) as f64)]);
    }
    out.tables.push(tails);
    out.detail("cycle_reconstruction", json!(cs.verify()));
    out.check(
        "cycle_reconstruction".into(),
        cs.verify(),
        cs.regenerations as f64,
        f64::NAN,
        0.0,
        "segment sums recomputed bit-exactly".into(),
    );
    Ok(())
}

fn run_constants<E: Executor>(cfg: &ExperimentConfig, out: &mut Outcome, exec: &E) -> ldlab_core::Result<()> {
    let model = &cfg.model;
    let mut t = Table::new("constants", CONSTANT_COLUMNS);
    let closed = b_plus_closed_form(model).transpose()?;
    if model.alpha().is_none() {
        if let Some(m) = model.mean_closed_form() {
            out.value("mean", m, 0.0, "closed_form");
        }
    } else {
        let tail = marginal(cfg, out, exec)?;
        out.value("tail_constant", tail.constant, tail.constant_halfwidth, "marginal");
        let mean = if model.centered() {
            Some(model_mean(model, cfg.constants.mean_reps, StreamKey::phase(cfg.seed, 0x3ea1), exec)?)
        } else {
            None
        };
        if let Some(m) = mean {
            out.value("mean", m.value, m.ci_halfwidth, if m.exact { "closed_form" } else { "mc_expectation" });
        }
        let primary = match closed {
            Some(v) => ConstantEstimate::closed(v, 0),
            None => ldlab_core::theory::b_plus_limit(model, &limit(cfg), exec)?,
        };
        out.constant("b_plus", &primary);
        if let Some(vm) = b_plus_closed_form(&model.mirrored()).transpose()? {
            out.value("b_minus", vm, 0.0, "closed_form");
        }
        if cfg.constants.differencing || (closed.is_none() && !cfg.constants.x_grid.is_empty()) {
            let x_grid = if cfg.constants.x_grid.is_empty() {
                log_grid(30.0 * tail.scale(), 300.0 * tail.scale(), 6)
            } else {
                cfg.constants.x_grid.clone()
            };
            let cc = CurveConfig {
                reps: cfg.constants.diff_reps,
                seed: StreamKey::phase(cfg.seed, PHASE_DIFF),
                x_grid,
                center: mean.map(|m| m.value).unwrap_or(0.0),
            };
            match b_plus_by_differencing(model, &cc, exec) {
                Ok((est, trace)) => {
                    let mut d = Table::new("differencing", DIFF_COLUMNS);
                    for l in &trace {
                        d.push(vec![l.k.to_string(), num(l.value), num(l.ci_halfwidth)]);
                    }
                    out.tables.push(d);
                    out.constant("b_plus_differencing", &est);
                    let w = cfg.checks.agreement_widths;
                    out.check(
                        "b_plus_agreement".into(),
                        primary.agrees(&est, w),
                        est.value,
                        primary.value,
                        w * primary.joint_halfwidth(&est),
                        format!("{} vs differencing", method_name(primary.method)),
                    );
                }
                Err(e) => out.errors.push(format!("differencing: {e}")),
            }
        }
    }
    for c in &out.constants {
        t.push(vec![c.name.clone(), num(c.value), num(c.ci_halfwidth), c.method.clone()]);
    }
    out.tables.insert(0, t);
    Ok(())
}

/// Validate, run and assemble the bundle. Run-time failures are recorded
/// in the bundle (status `error`); only an invalid config is an `Err`.
pub fn run<E: Executor>(cfg: &ExperimentConfig, workers: usize, exec: &E) -> Result<ReportBundle, ConfigError> {
    cfg.validate()?;
    let mut out = Outcome::new();
    let r = match cfg.kind {
        Kind::Ratio => run_ratio(cfg, &mut out, exec),
        Kind::Conditions => run_conditions(cfg, &mut out, exec),
        Kind::Regen => run_regen(cfg, &mut out, exec),
        Kind::Constants => run_constants(cfg, &mut out, exec),
    };
    if let Err(e) = r {
        out.errors.push(e.to_string());
    }
    if cfg.kind != Kind::Constants && !out.tables.iter().any(|t| t.name == "constants") {
        let mut t = Table::new("constants", CONSTANT_COLUMNS);
        for c in &out.constants {
            t.push(vec![c.name.clone(), num(c.value), num(c.ci_halfwidth), c.method.clone()]);
        }
        out.tables.push(t);
    }
    let mut summary = Summary {
        kind: cfg.kind.name().into(),
        model: cfg.model.name().into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        status: Status::Pass,
        constants: out.constants,
        checks: out.checks,
        grid_max_deviation: out.deviations,
        details: out.details,
        notes: out.notes,
        errors: out.errors,
    };
    summary.status = summary.status_from_checks();
    Ok(ReportBundle { summary, tables: out.tables, workers, config_toml: cfg.to_toml() })
}
