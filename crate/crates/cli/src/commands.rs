use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use flowshape::batch::{
    execute_plan, naive_reference, plan_probes, token_counts, tokenize_flow, tokenize_text, tokens, MockScorer, Token,
};
use flowshape::curation::{classify_sample, KPass, VerificationRecord, DEFAULT_BUDGET};
use flowshape::env::{posterior, random_env, support_masses_from, EnvSpec, FlowDistribution, RandomEnvConfig};
use flowshape::flow::{relative_coords, PerceptualFlow};
use flowshape::grammar::{parse_flow_bytes, serialize_flow};
use flowshape::reward::{shaped_reward, tilt, RewardConfig};
use flowshape::theory::{
    bound_derivative_q, calibrated_bound, lambda_star, tv_bound_thm1, BoundReport, LambdaStar, SweepContext,
};
use flowshape::tolerances as tol;
use flowshape::trainer::{train as run_training, TrainConfig, TrainMode};

use crate::manifest::{load_env, LoadedEnv, RunManifest};
use crate::numfmt::{fmt_sig, json_num, parse_grid};
use crate::{Common, Status};

fn read_input(path: Option<&Path>) -> Result<Vec<u8>> {
    match path {
        Some(p) if p != Path::new("-") => std::fs::read(p).with_context(|| format!("reading {}", p.display())),
        _ => {
            let mut buf = Vec::new();
            std::io::stdin().read_to_end(&mut buf).context("reading stdin")?;
            Ok(buf)
        }
    }
}

fn write_output(c: &Common, bytes: &[u8]) -> Result<()> {
    match &c.out {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn write_json(c: &Common, v: &Value) -> Result<()> {
    write_output(c, (serde_json::to_string_pretty(v)? + "\n").as_bytes())
}

fn pool(c: &Common) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(c.threads)
        .build()
        .context("building worker pool")
}

fn grids(lambda: &str, eps: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let l = parse_grid(lambda).context("--lambda")?;
    let e = parse_grid(eps).context("--eps")?;
    if let Some(bad) = l.iter().find(|&&x| x < 0.0) {
        bail!("--lambda: intensity {bad} is negative");
    }
    if let Some(bad) = e.iter().find(|&&x| !(0.0..=1.0).contains(&x)) {
        bail!("--eps: radius {bad} outside [0, 1]");
    }
    Ok((l, e))
}

/// Worst measured deviation for one named identity.
struct Check {
    name: &'static str,
    tolerance: f64,
    worst: f64,
    evaluated: usize,
    failures: Vec<String>,
}

impl Check {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            worst: 0.0,
            evaluated: 0,
            failures: Vec::new(),
        }
    }

    fn record(&mut self, deviation: f64, at: impl FnOnce() -> String) {
        self.evaluated += 1;
        self.worst = self.worst.max(deviation);
        if !(deviation <= self.tolerance) {
            self.failures.push(format!("{} (deviation {})", at(), fmt_sig(deviation)));
        }
    }

    fn require(&mut self, ok: bool, at: impl FnOnce() -> String) {
        self.evaluated += 1;
        if !ok {
            self.failures.push(at());
        }
    }

    fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn to_json(&self) -> Value {
        json!({
            "name": self.name,
            "passed": self.passed(),
            "measured": json_num(self.worst),
            "tolerance": json_num(self.tolerance),
            "evaluated": self.evaluated,
            "failures": self.failures,
        })
    }
}

/// Enumerated quantities for one cell beyond what the sweep reports.
struct CellCheck {
    report: BoundReport,
    z_enumerated: f64,
    proportionality_spread: f64,
}

fn check_cell(env: &EnvSpec, ctx: &SweepContext, post: &FlowDistribution, lambda: f64, eps: f64) -> flowshape::Result<CellCheck> {
    let report = ctx.cell(lambda, eps)?;
    let cfg = RewardConfig::new(lambda, eps)?;
    let (tilted, z) = tilt(env, &cfg, post)?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (flow, p) in tilted.iter() {
        let d = shaped_reward(env, &cfg, flow)?.log_total - p.ln();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    Ok(CellCheck {
        report,
        z_enumerated: z,
        proportionality_spread: 0.5 * (hi - lo),
    })
}

pub fn verify_theorems(c: &Common, env_arg: &str, lambda: &str, eps: &str) -> Result<Status> {
    let loaded = load_env(env_arg)?;
    let env = &loaded.spec;
    let (lgrid, egrid) = grids(lambda, eps)?;
    let post = posterior(env)?;
    let ctx = SweepContext::new(env)?;

    let pairs: Vec<(f64, f64)> = lgrid.iter().flat_map(|&l| egrid.iter().map(move |&e| (l, e))).collect();
    let cells: Vec<CellCheck> = pool(c)?.install(|| {
        pairs
            .par_iter()
            .map(|&(l, e)| check_cell(env, &ctx, &post, l, e))
            .collect::<flowshape::Result<_>>()
    })?;

    let mut partition = Check::new("partition_closed_form", tol::EXACT);
    let mut proportional = Check::new("reward_proportional_to_tilted_posterior", tol::PROPORTIONALITY);
    let mut attained = Check::new("tv_bound_attained", tol::EXACT);
    let mut flagged = Vec::new();
    for cell in &cells {
        let r = &cell.report;
        let at = || format!("lambda={}, eps={}", fmt_sig(r.lambda), fmt_sig(r.eps));
        partition.record((cell.z_enumerated - r.z_lambda).abs(), at);
        proportional.record(cell.proportionality_spread, at);
        if r.calibrated {
            attained.record((r.exact_tv - r.bound).abs(), at);
        } else {
            flagged.push(json!({"lambda": json_num(r.lambda), "eps": json_num(r.eps), "reason": "vicinity not inside valid support"}));
        }
    }

    let mut calibration = Check::new("calibrated_intensity", tol::EXACT);
    let mut limit_zero = Check::new("limit_lambda_to_zero", tol::LIMIT_ZERO);
    let mut limit_inf = Check::new("limit_lambda_to_infinity", tol::EXACT);
    let mut derivative = Check::new("calibrated_bound_derivative", tol::DERIVATIVE_FD);
    let mut monotone = Check::new("calibrated_bound_decreasing_in_q", 0.0);
    let mut per_eps = Vec::new();
    for &e in &egrid {
        let st = support_masses_from(env, &post, e)?;
        let at = || format!("eps={}", fmt_sig(e));
        let mut entry = json!({"eps": json_num(e), "s_v": json_num(st.s_v), "s_b": json_num(st.s_b), "q": json_num(st.q), "nested": st.nested});
        if !st.nested {
            per_eps.push(entry);
            continue;
        }
        limit_zero.record((tv_bound_thm1(st.s_v, st.q, tol::LAMBDA_ZERO)? - (1.0 - st.s_v)).abs(), at);
        // with an empty vicinity the tilt is uniform and D stays at 1 - s_v
        let hard_limit = if st.q > 0.0 { 1.0 - st.q } else { 1.0 - st.s_v };
        limit_inf.record((tv_bound_thm1(st.s_v, st.q, tol::LAMBDA_INFINITY)? - hard_limit).abs(), at);
        match lambda_star(st.s_v, st.s_b)? {
            LambdaStar::Finite(l) => {
                let cell = check_cell(env, &ctx, &post, l, e)?;
                let cb = calibrated_bound(st.s_v, st.q)?;
                calibration.record((cell.z_enumerated - st.s_v).abs(), at);
                calibration.record((cell.report.exact_tv - cb).abs(), at);
                entry["lambda_star"] = json_num(l);
                entry["calibrated_bound"] = json_num(cb);
                entry["exact_tv_at_lambda_star"] = json_num(cell.report.exact_tv);
            }
            LambdaStar::Infinite => entry["lambda_star"] = json!("inf"),
        }
        if st.s_v < 1.0 {
            let d = bound_derivative_q(st.s_v, st.q)?;
            derivative.require(d < 0.0, || format!("eps={}: derivative {} not negative", fmt_sig(e), fmt_sig(d)));
            let h = 1e-5;
            if st.q >= h && st.q + h <= 1.0 {
                let fd = (calibrated_bound(st.s_v, st.q + h)? - calibrated_bound(st.s_v, st.q - h)?) / (2.0 * h);
                derivative.record((d - fd).abs(), at);
            }
            let qs: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
            for w in qs.windows(2) {
                let (a, b) = (calibrated_bound(st.s_v, w[0])?, calibrated_bound(st.s_v, w[1])?);
                monotone.require(b < a, || format!("eps={}: bound rises between q={} and q={}", fmt_sig(e), w[0], w[1]));
            }
        }
        per_eps.push(entry);
    }

    let checks = [partition, proportional, attained, calibration, limit_zero, limit_inf, derivative, monotone];
    let passed = checks.iter().all(Check::passed);
    let manifest = RunManifest::new(
        "verify-theorems",
        Some(&loaded),
        json!({"lambda_grid": lgrid.iter().map(|&x| json_num(x)).collect::<Vec<_>>(), "eps_grid": egrid.iter().map(|&x| json_num(x)).collect::<Vec<_>>()}),
    );
    let report = json!({
        "manifest": manifest,
        "passed": passed,
        "checks": checks.iter().map(Check::to_json).collect::<Vec<_>>(),
        "per_eps": per_eps,
        "flagged_cells": flagged,
    });
    write_json(c, &report)?;
    for ch in &checks {
        eprintln!(
            "{} {}: worst {} (tol {}) over {}",
            if ch.passed() { "PASS" } else { "FAIL" },
            ch.name,
            fmt_sig(ch.worst),
            fmt_sig(ch.tolerance),
            ch.evaluated
        );
    }
    Ok(if passed { Status::Ok } else { Status::CheckFailed })
}

fn resolve_lambda(loaded: &LoadedEnv, lambda: &str, eps: f64) -> Result<f64> {
    if lambda.trim() == "star" {
        let post = posterior(&loaded.spec)?;
        let st = support_masses_from(&loaded.spec, &post, eps)?;
        return match lambda_star(st.s_v, st.s_b)? {
            LambdaStar::Finite(l) => Ok(l),
            LambdaStar::Infinite => bail!("--lambda star: calibrated intensity is infinite at eps={eps} (s_b = s_v)"),
        };
    }
    lambda.trim().parse().with_context(|| format!("--lambda {lambda:?} is neither a number nor `star`"))
}

#[allow(clippy::too_many_arguments)]
pub fn train(
    c: &Common,
    env_arg: &str,
    lambda: &str,
    eps: f64,
    mode: &str,
    steps: usize,
    step_size: f64,
    group_size: usize,
) -> Result<Status> {
    let loaded = load_env(env_arg)?;
    let lambda = resolve_lambda(&loaded, lambda, eps)?;
    let cfg = RewardConfig::new(lambda, eps)?;
    let mode: TrainMode = mode.parse().context("--mode")?;
    let tcfg = TrainConfig {
        step_size,
        steps,
        group_size,
        seed: c.seed,
        mode,
    };
    let (history, status) = match run_training(&loaded.spec, &cfg, &tcfg)? {
        Ok(out) => (out.history, Status::Ok),
        Err(d) => {
            eprintln!("{d}");
            (d.last_good.history, Status::CheckFailed)
        }
    };

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "loss", "grad_norm", "tv_tilted", "tv_valid"])?;
    for m in &history {
        w.write_record([m.step.to_string(), fmt_sig(m.loss), fmt_sig(m.grad_norm), fmt_sig(m.tv_tilted), fmt_sig(m.tv_valid)])?;
    }
    write_output(c, &w.into_inner()?)?;
    let manifest = RunManifest::new(
        "train",
        Some(&loaded),
        json!({"lambda": json_num(lambda), "eps": json_num(eps), "mode": mode, "steps": steps, "step_size": json_num(step_size), "group_size": group_size, "seed": c.seed}),
    );
    match &c.out {
        Some(p) => manifest.write_beside(p)?,
        None => eprintln!("{}", serde_json::to_string(&manifest)?),
    }
    if let Some(last) = history.last() {
        eprintln!(
            "lambda {}: final loss {}, tv_tilted {}, tv_valid {}",
            fmt_sig(lambda),
            fmt_sig(last.loss),
            fmt_sig(last.tv_tilted),
            fmt_sig(last.tv_valid)
        );
    }
    Ok(status)
}

/// For each eps with a finite calibrated intensity inside the grid, whether
/// some grid minimizer of the bound (ties within `EXACT`) lies within one
/// grid step of it. Flat columns, as when the vicinity is empty, pass.
fn argmin_verdicts(rows: &[BoundReport], lgrid: &[f64], egrid: &[f64]) -> Result<Vec<Value>> {
    let mut order: Vec<usize> = (0..lgrid.len()).collect();
    order.sort_by(|&a, &b| lgrid[a].total_cmp(&lgrid[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| lgrid[i]).collect();
    let mut out = Vec::new();
    if sorted.len() < 2 {
        return Ok(out);
    }
    for (ei, &e) in egrid.iter().enumerate() {
        let col: Vec<&BoundReport> = order.iter().map(|&li| &rows[li * egrid.len() + ei]).collect();
        let first = col[0];
        if !first.calibrated || first.s_v >= 1.0 {
            continue;
        }
        let LambdaStar::Finite(l_star) = lambda_star(first.s_v, first.s_b)? else {
            continue;
        };
        if l_star < sorted[0] || l_star > sorted[sorted.len() - 1] {
            continue;
        }
        let min = col.iter().map(|r| r.bound).fold(f64::INFINITY, f64::min);
        // grid points bracketing lambda*, widened by one step on each side
        let hi = sorted.partition_point(|&x| x < l_star).min(sorted.len() - 1);
        let lo = if sorted[hi] == l_star { hi } else { hi - 1 };
        let window = lo.saturating_sub(1)..=(hi + 1).min(sorted.len() - 1);
        let near = window.clone().any(|i| col[i].bound <= min + tol::EXACT);
        let best = (0..col.len()).find(|&i| col[i].bound <= min + tol::EXACT).unwrap();
        out.push(json!({
            "eps": json_num(e),
            "lambda_star": json_num(l_star),
            "argmin_lambda": json_num(sorted[best]),
            "flat": col.iter().all(|r| r.bound <= min + tol::EXACT),
            "within_one_step": near,
        }));
    }
    Ok(out)
}

pub fn sweep(c: &Common, env_arg: &str, lambda: &str, eps: &str) -> Result<Status> {
    let loaded = load_env(env_arg)?;
    let (lgrid, egrid) = grids(lambda, eps)?;
    let ctx = SweepContext::new(&loaded.spec)?;
    let pairs: Vec<(f64, f64)> = lgrid.iter().flat_map(|&l| egrid.iter().map(move |&e| (l, e))).collect();
    let rows: Vec<BoundReport> = pool(c)?.install(|| {
        pairs
            .par_iter()
            .map(|&(l, e)| ctx.cell(l, e))
            .collect::<flowshape::Result<_>>()
    })?;

    let mut text = String::from(BoundReport::CSV_HEADER);
    text.push('\n');
    for r in &rows {
        let fields = [r.lambda, r.eps, r.s_v, r.s_b, r.q, r.z_lambda, r.bound, r.exact_tv].map(fmt_sig);
        text.push_str(&fields.join(","));
        text.push(',');
        text.push_str(if r.calibrated { "true" } else { "false" });
        text.push('\n');
    }
    write_output(c, text.as_bytes())?;

    let mut equality = Check::new("tv_bound_attained", tol::EXACT);
    for r in rows.iter().filter(|r| r.calibrated) {
        equality.record((r.exact_tv - r.bound).abs(), || format!("lambda={}, eps={}", fmt_sig(r.lambda), fmt_sig(r.eps)));
    }
    let argmin = argmin_verdicts(&rows, &lgrid, &egrid)?;
    let argmin_ok = argmin.iter().all(|v| v["within_one_step"] == json!(true));
    let manifest = RunManifest::new(
        "sweep",
        Some(&loaded),
        json!({
            "lambda_grid": lgrid.iter().map(|&x| json_num(x)).collect::<Vec<_>>(),
            "eps_grid": egrid.iter().map(|&x| json_num(x)).collect::<Vec<_>>(),
            "rows": rows.len(),
            "verdicts": {"equality": equality.to_json(), "bound_minimized_near_lambda_star": argmin},
        }),
    );
    match &c.out {
        Some(p) => manifest.write_beside(p)?,
        None => eprintln!("{}", serde_json::to_string(&manifest)?),
    }
    Ok(if equality.passed() && argmin_ok { Status::Ok } else { Status::CheckFailed })
}

#[derive(Debug, Serialize, Deserialize)]
struct RoiEcho {
    relative: [i64; 4],
    normalized: [f64; 4],
}

/// JSON shape shared by parse-flow output and render-flow input.
#[derive(Debug, Serialize, Deserialize)]
struct ParsedFlow {
    flow: PerceptualFlow,
    #[serde(default, skip_deserializing)]
    rois: Vec<RoiEcho>,
}

pub fn parse_flow(c: &Common, input: Option<&Path>) -> Result<Status> {
    let bytes = read_input(input)?;
    let flow = parse_flow_bytes(&bytes)?;
    let rois = flow
        .states
        .iter()
        .map(|s| RoiEcho {
            relative: relative_coords(&s.roi),
            normalized: s.roi.coords(),
        })
        .collect();
    write_output(c, (serde_json::to_string_pretty(&ParsedFlow { flow, rois })? + "\n").as_bytes())?;
    Ok(Status::Ok)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FlowInput {
    Wrapped(ParsedFlow),
    Bare(PerceptualFlow),
}

pub fn render_flow(c: &Common, input: Option<&Path>) -> Result<Status> {
    let bytes = read_input(input)?;
    let flow = match serde_json::from_slice::<FlowInput>(&bytes) {
        Ok(FlowInput::Wrapped(p)) => p.flow,
        Ok(FlowInput::Bare(f)) => f,
        // report the error against the bare schema, which is the simpler one
        Err(_) => serde_json::from_slice::<PerceptualFlow>(&bytes).context("flow JSON")?,
    };
    write_output(c, serialize_flow(&flow).as_bytes())?;
    Ok(Status::Ok)
}

pub fn classify(c: &Common, input: Option<&Path>) -> Result<Status> {
    let bytes = read_input(input)?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
    let header: Vec<String> = r.headers().context("records header")?.iter().map(str::to_string).collect();
    let with_budget = match header.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        ["k_pass_without", "k_pass_with"] => false,
        ["k_pass_without", "k_pass_with", "budget"] => true,
        _ => bail!("records header must be `k_pass_without,k_pass_with[,budget]`, found `{}`", header.join(",")),
    };

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k_pass_without", "k_pass_with", "budget", "decision"])?;
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.with_context(|| format!("records line {line}"))?;
        let without: KPass = rec[0].parse().with_context(|| format!("records line {line}: k_pass_without"))?;
        let with: KPass = rec[1].parse().with_context(|| format!("records line {line}: k_pass_with"))?;
        let budget = if with_budget {
            rec[2].parse().with_context(|| format!("records line {line}: budget"))?
        } else {
            DEFAULT_BUDGET
        };
        let vr = VerificationRecord {
            k_pass_without: without,
            k_pass_with: with,
            budget,
        };
        w.write_record([without.to_string(), with.to_string(), budget.to_string(), classify_sample(&vr).as_str().to_string()])?;
    }
    write_output(c, &w.into_inner()?)?;
    if let Some(p) = &c.out {
        RunManifest::new("classify", None, json!({"with_budget_column": with_budget})).write_beside(p)?;
    }
    Ok(Status::Ok)
}

pub fn plan_batch(c: &Common, flow_path: Option<&Path>, answer: Option<&str>, terminal: bool) -> Result<Status> {
    let bytes = read_input(flow_path)?;
    let flow = parse_flow_bytes(&bytes)?;
    let probe: Vec<Token> = match (answer, terminal) {
        (_, true) => vec![tokens::TERMINAL],
        (Some(a), false) if !a.is_empty() => tokenize_text(a),
        _ => bail!("plan-batch needs --answer TEXT or --terminal"),
    };
    let segments = tokenize_flow(&flow);
    let plan = plan_probes(&segments, &probe);
    let scorer = MockScorer { seed: c.seed };
    let planned = execute_plan(&plan, &scorer);
    let naive = naive_reference(&segments, &probe, &scorer);
    let exact = planned.len() == naive.len() && planned.iter().zip(&naive).all(|(a, b)| a.to_bits() == b.to_bits());
    let counts = token_counts(&segments, probe.len());
    let manifest = RunManifest::new(
        "plan-batch",
        None,
        json!({"probe": if terminal { "terminal" } else { "answer" }, "probe_tokens": probe.len(), "seed": c.seed}),
    );
    let doc = json!({
        "manifest": manifest,
        "plan": plan.dump(),
        "shared_len": plan.shared_len,
        "counts": counts,
        "scores": planned.iter().map(|&x| json_num(x)).collect::<Vec<_>>(),
        "equivalence": if exact { "exact" } else { "mismatch" },
    });
    write_json(c, &doc)?;
    Ok(if exact { Status::Ok } else { Status::CheckFailed })
}

pub fn gen_env(c: &Common, name: Option<&str>, cfg: RandomEnvConfig) -> Result<Status> {
    let env = match name {
        Some(n) => match flowshape::envs::generate(n) {
            Some(e) => e?,
            None => bail!("no randomized bundled env named {n:?} (expected r1 or r2)"),
        },
        None => random_env(c.seed, cfg)?,
    };
    write_output(c, (env.to_json() + "\n").as_bytes())?;
    Ok(Status::Ok)
}
