use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use gcnstab::datasets::{
    canonical_files, generate_synthetic, load_canonical, save_canonical, Dataset, GraphKind, SyntheticSpec,
};
use gcnstab::ego::g_lambda_empirical;
use gcnstab::graph::{FilterKind, FilterMatrix};
use gcnstab::model::Loss;
use gcnstab::report::{schemas, write_csv, Cell, CsvSchema};
use gcnstab::spectral::{interlacing_check, lambda_max, PowerConfig};
use gcnstab::stability::{
    beta_bound, empirical_gap, empirical_stability, gen_gap_bound, BoundInputs, SpectralInputs, StabilityConfig,
};
use gcnstab::trainer::{sgd_train, twin_train, Init, Objective, Perturbation, Sample, SgdConfig, TwinTrace};
use gcnstab::{Error, Result, RunError};

use crate::args::*;
use crate::manifest::{hash_inputs, json_f64, write_manifest, InputFile, ResolvedConstants, RunManifest};

/// How a run ended when it did not fail validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    /// Non-finite weights or losses; whatever was computed has been written.
    Diverged,
}

pub fn run(cmd: &Command, argv: Vec<String>) -> Result<Outcome> {
    match cmd {
        Command::Synth(a) => synth(a, argv),
        Command::Spectra(a) => spectra(a, argv),
        Command::Interlace(a) => interlace(a, argv),
        Command::Train(a) => train(a, argv),
        Command::Twin(a) => twin(a, argv),
        Command::Gap(a) => gap(a, argv),
        Command::Bound(a) => bound(a, argv),
        Command::Stability(a) => stability(a, argv),
    }
}

struct Loaded {
    ds: Dataset,
    inputs: Vec<InputFile>,
}

fn load(d: &DataArgs) -> Result<Loaded> {
    let ds = load_canonical(&d.data, d.normalize == Switch::On)?;
    let inputs = hash_inputs(&canonical_files(&d.data))?;
    Ok(Loaded { ds, inputs })
}

/// Filter, samples and spectral quantities shared by the training subcommands.
struct Setup {
    all: Vec<Sample>,
    train: Vec<Sample>,
    test: Vec<Sample>,
    obj: Objective,
    sgd: SgdConfig,
    init: Vec<f64>,
    g_lambda: f64,
    lambda_max: f64,
}

fn setup(ds: &Dataset, model: &ModelArgs, sgd: &SgdArgs) -> Result<Setup> {
    if let Loss::ClampedCrossEntropy { eps } = model.loss() {
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::InvalidParameter(format!("xent eps must lie in (0, 0.5), got {eps}")));
        }
    }
    let filter = FilterMatrix::build(&ds.graph, model.filter.kind());
    let all = ds.samples(&filter)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| all[i].clone()).collect::<Vec<_>>();
    let (train, test) = (pick(&ds.split.train), pick(&ds.split.test));
    let cfg = SgdConfig { eta: sgd.eta, epochs: sgd.epochs, seed: sgd.seed, mode: sgd.mode() };
    cfg.validate()?;
    let init = match sgd.init_seed {
        Some(seed) => Init::Uniform { seed },
        None => Init::Zero,
    };
    let spec = lambda_max(&filter, &PowerConfig::default())?;
    let g = g_lambda_empirical(&filter, &ds.features)?;
    Ok(Setup {
        init: init.weights(ds.features.d_in()),
        obj: Objective { act: model.act.activation(), loss: model.loss() },
        g_lambda: g.value,
        lambda_max: spec.lambda_max,
        all,
        train,
        test,
        sgd: cfg,
    })
}

fn base_manifest(name: &'static str, argv: Vec<String>, flags: impl serde::Serialize, l: &Loaded) -> RunManifest {
    let mut m = RunManifest::new(name, argv, flags);
    m.inputs = l.inputs.clone();
    m
}

fn fill_model(m: &mut RunManifest, s: &Setup, sgd: &SgdArgs) {
    m.constants = ResolvedConstants::new(s.obj.act_constants(), s.obj.loss_constants());
    m.g_lambda = Some(s.g_lambda);
    m.lambda_max = Some(s.lambda_max);
    m.seeds = std::iter::once(sgd.seed).chain(sgd.init_seed).collect();
    if !s.obj.loss.satisfies_assumptions() {
        eprintln!(
            "warning: the {} loss is not Lipschitz and smooth with moderate constants; bounds are reported but vacuous",
            s.obj.loss
        );
    }
}

fn csv_bytes(schema: &CsvSchema, rows: &[Vec<Cell>]) -> Result<(Vec<u8>, bool)> {
    let mut buf = Vec::new();
    let summary = write_csv(&mut buf, schema, rows)?;
    Ok((buf, summary.saw_nan))
}

/// Writes `bytes` to `out`, or to stdout when no path was given, and then the
/// manifest beside the file.
fn emit(bytes: &[u8], out: Option<&Path>, manifest: &mut RunManifest) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, bytes).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
            manifest.outputs.push(path.to_path_buf());
            write_manifest(manifest, path)?;
        }
        None => {
            let mut stdout = io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::Io { path: PathBuf::from("<stdout>"), source: e })?;
        }
    }
    Ok(())
}

fn json_bytes(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s.into_bytes()
}

fn diverged(step: usize) -> Outcome {
    eprintln!("diverged: non-finite weights or loss at step {step}; partial results written");
    Outcome::Diverged
}

fn synth(a: &SynthArgs, argv: Vec<String>) -> Result<Outcome> {
    let graph = match a.kind {
        GraphChoice::Er => GraphKind::ErdosRenyi { n: a.n, p: a.p },
        GraphChoice::Star => GraphKind::Star { n: a.n },
        GraphChoice::Complete => GraphKind::Complete { n: a.n },
        GraphChoice::Cycle => GraphKind::Cycle { n: a.n },
    };
    if !(a.train_fraction > 0.0 && a.train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!("train fraction must lie in (0, 1), got {}", a.train_fraction)));
    }
    let spec = SyntheticSpec {
        graph,
        d_in: a.d,
        seed: a.seed,
        teacher_noise: a.noise,
        train_fraction: a.train_fraction,
    };
    let syn = generate_synthetic(&spec)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
    save_canonical(&syn.dataset, &a.out)?;

    let ds = &syn.dataset;
    let mut m = RunManifest::new("synth", argv, a);
    m.seeds = vec![a.seed];
    m.outputs = canonical_files(&a.out).to_vec();
    m.summary = json!({
        "n": ds.n(),
        "edges": ds.graph.edges().len(),
        "d_in": ds.features.d_in(),
        "train": ds.split.train.len(),
        "test": ds.split.test.len(),
        "positives": ds.labels.iter().filter(|&&y| y == 1).count(),
        "teacher": syn.teacher,
    });
    write_manifest(&m, &a.out)?;
    Ok(Outcome::Ok)
}

const ALL_FILTERS: [FilterChoice; 4] =
    [FilterChoice::Unnorm, FilterChoice::Symnorm, FilterChoice::Rw, FilterChoice::Identity];

fn spectra(a: &SpectraArgs, argv: Vec<String>) -> Result<Outcome> {
    let l = load(&a.data)?;
    let filters = if a.filter.is_empty() { ALL_FILTERS.to_vec() } else { a.filter.clone() };
    let cfg = PowerConfig { tol: a.tol, max_iters: a.max_iters, ..PowerConfig::default() };
    let mut rows = Vec::new();
    let mut per_filter = Vec::new();
    for choice in filters {
        let f = FilterMatrix::build(&l.ds.graph, choice.kind());
        let r = lambda_max(&f, &cfg)?;
        if !r.converged {
            eprintln!(
                "warning: {} did not converge in {} iterations (residual {:e})",
                choice.kind().short_name(),
                r.iterations,
                r.residual
            );
        }
        rows.push(vec![
            Cell::from(choice.kind().short_name()),
            r.lambda_max.into(),
            r.method.as_str().into(),
            r.iterations.into(),
            r.residual.into(),
        ]);
        per_filter.push(json!({
            "kind": choice.kind().short_name(),
            "lambda_max": json_f64(r.lambda_max),
            "converged": r.converged,
        }));
    }
    let (bytes, saw_nan) = csv_bytes(&schemas::SPECTRA, &rows)?;
    let mut m = base_manifest("spectra", argv, a, &l);
    m.summary = json!({ "filters": per_filter });
    emit(&bytes, a.out.as_deref(), &mut m)?;
    Ok(if saw_nan { Outcome::Diverged } else { Outcome::Ok })
}

fn interlace(a: &InterlaceArgs, argv: Vec<String>) -> Result<Outcome> {
    let l = load(&a.data)?;
    let filters = if a.filter.is_empty() {
        vec![FilterChoice::Unnorm, FilterChoice::Symnorm, FilterChoice::Rw]
    } else {
        a.filter.clone()
    };
    let mut rows = Vec::new();
    let mut per_filter = Vec::new();
    for choice in filters {
        let kind: FilterKind = choice.kind();
        let f = FilterMatrix::build(&l.ds.graph, kind);
        let r = interlacing_check(&f, a.tol, &PowerConfig::default())?;
        for node in &r.nodes {
            rows.push(vec![
                Cell::from(kind.short_name()),
                node.node.into(),
                node.ego_size.into(),
                node.lambda_ego.into(),
                r.lambda_global.into(),
                node.ratio.into(),
                Cell::from(if node.violation { "1" } else { "0" }),
            ]);
        }
        if !r.holds() {
            eprintln!("warning: {}: {} ego-graphs exceed the global spectrum", kind.short_name(), r.violations.len());
        }
        per_filter.push(json!({
            "kind": kind.short_name(),
            "lambda_global": json_f64(r.lambda_global),
            "max_ratio": json_f64(r.max_ratio),
            "violations": r.violations,
        }));
    }
    let (bytes, saw_nan) = csv_bytes(&schemas::INTERLACE, &rows)?;
    let mut m = base_manifest("interlace", argv, a, &l);
    m.summary = json!({ "filters": per_filter });
    emit(&bytes, a.out.as_deref(), &mut m)?;
    Ok(if saw_nan { Outcome::Diverged } else { Outcome::Ok })
}

fn train(a: &TrainArgs, argv: Vec<String>) -> Result<Outcome> {
    let l = load(&a.data)?;
    let s = setup(&l.ds, &a.model, &a.sgd)?;
    let (run, diverged_at) = match sgd_train(&s.train, &s.test, &s.obj, &s.sgd, &s.init) {
        Ok(run) => (run, None),
        Err(RunError::Diverged { step, partial }) => (*partial, Some(step)),
        Err(RunError::Invalid(e)) => return Err(e),
    };
    let rows: Vec<Vec<Cell>> = run
        .epochs
        .iter()
        .map(|e| vec![e.epoch.into(), e.train_loss.into(), e.test_loss.into()])
        .collect();
    let (bytes, saw_nan) = csv_bytes(&schemas::TRAIN, &rows)?;
    let mut m = base_manifest("train", argv, a, &l);
    fill_model(&mut m, &s, &a.sgd);
    m.summary = json!({
        "steps": run.steps,
        "diverged_at_step": diverged_at,
        "final_theta": run.theta.iter().map(|&v| json_f64(v)).collect::<Vec<_>>(),
    });
    emit(&bytes, a.out.as_deref(), &mut m)?;
    Ok(match diverged_at {
        Some(step) => diverged(step),
        None if saw_nan => Outcome::Diverged,
        None => Outcome::Ok,
    })
}

fn twin_rows(trace: &TwinTrace) -> Vec<Vec<Cell>> {
    trace
        .steps
        .iter()
        .map(|s| {
            vec![
                s.step.into(),
                s.branch.as_str().into(),
                s.delta_theta_l2.into(),
                s.same_sample.map(|c| c.lhs).into(),
                s.same_sample.map(|c| c.rhs).into(),
                s.differing_sample.map(|c| c.lhs).into(),
                s.differing_sample.map(|c| c.rhs).into(),
                s.envelope.into(),
            ]
        })
        .collect()
}

fn twin(a: &TwinArgs, argv: Vec<String>) -> Result<Outcome> {
    let l = load(&a.data)?;
    let s = setup(&l.ds, &a.model, &a.sgd)?;
    let node = match a.replacement {
        Some(node) => node,
        None => *l
            .ds
            .split
            .test
            .first()
            .ok_or_else(|| Error::InvalidParameter("no test node to draw the replacement from; pass --replacement".into()))?,
    };
    let replacement = s.all.get(node).cloned().ok_or(Error::IndexOutOfRange { index: node, size: s.all.len() })?;
    let pert = Perturbation { index: a.perturb_index, replacement };
    // Normalized features: the empirical sup over both training sets.
    // Otherwise fall back to the filter norm.
    let g = if a.data.normalize == Switch::On { None } else { Some(s.lambda_max) };
    let (trace, diverged_at) = match twin_train(&s.train, &pert, &s.obj, &s.sgd, &s.init, g) {
        Ok(t) => (t, None),
        Err(RunError::Diverged { step, partial }) => (*partial, Some(step)),
        Err(RunError::Invalid(e)) => return Err(e),
    };
    let (bytes, saw_nan) = csv_bytes(&schemas::TWIN, &twin_rows(&trace))?;
    let mut m = base_manifest("twin", argv, a, &l);
    fill_model(&mut m, &s, &a.sgd);
    let tol = 1e-9;
    let stated = trace.violations(tol);
    let chain = trace.chain_rule_violations(tol);
    m.summary = json!({
        "perturb_index": a.perturb_index,
        "replacement_node": node,
        "g_lambda_used": json_f64(trace.g_lambda),
        "steps": trace.steps.len(),
        "final_delta_theta_l2": json_f64(trace.final_delta()),
        "diverged_at_step": diverged_at,
        "violations": {
            "same_sample": stated.same_sample,
            "differing_sample": stated.differing_sample,
            "envelope": stated.envelope,
        },
        "chain_rule_violations": {
            "same_sample": chain.same_sample,
            "differing_sample": chain.differing_sample,
            "envelope": chain.envelope,
        },
    });
    emit(&bytes, a.out.as_deref(), &mut m)?;
    Ok(match diverged_at {
        Some(step) => diverged(step),
        None if saw_nan => Outcome::Diverged,
        None => Outcome::Ok,
    })
}

fn spectral_inputs(s: &Setup, b: &BoundSourceArgs) -> SpectralInputs {
    SpectralInputs { g_lambda: s.g_lambda, lambda_max: s.lambda_max, source: b.lambda_source.source() }
}

fn gap(a: &GapArgs, argv: Vec<String>) -> Result<Outcome> {
    let l = load(&a.data)?;
    let s = setup(&l.ds, &a.model, &a.sgd)?;
    let spectral = spectral_inputs(&s, &a.bound);
    let r = empirical_gap(&s.train, &s.test, &s.obj, &s.sgd, &s.init, spectral, a.bound.delta, a.bound.loss_bound)?;
    let rows: Vec<Vec<Cell>> = r
        .rows
        .iter()
        .map(|g| {
            vec![
                g.epoch.into(),
                g.train_loss.into(),
                g.test_loss.into(),
                g.gap.into(),
                g.train_err01.into(),
                g.test_err01.into(),
            ]
        })
        .collect();
    let (bytes, saw_nan) = csv_bytes(&schemas::GAP, &rows)?;
    let mut m = base_manifest("gap", argv, a, &l);
    fill_model(&mut m, &s, &a.sgd);
    m.constants.loss_bound = Some(json_f64(r.bound_inputs.loss_bound));
    m.summary = json!({
        "lambda_source": spectral.source.as_str(),
        "T": r.bound_inputs.steps,
        "m": r.bound_inputs.m,
        "beta_m": json_f64(r.beta_m),
        "gap_bound": json_f64(r.gap_bound),
        "final_gap": r.final_gap().map(json_f64),
        "ratio": json_f64(r.ratio),
        "diverged_at_step": r.diverged_at,
    });
    emit(&bytes, a.out.as_deref(), &mut m)?;
    Ok(match r.diverged_at {
        Some(step) => diverged(step),
        None if saw_nan => Outcome::Diverged,
        None => Outcome::Ok,
    })
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn bound(a: &BoundArgs, argv: Vec<String>) -> Result<Outcome> {
    let l = load(&a.data)?;
    let s = setup(&l.ds, &a.model, &a.sgd)?;
    let spectral = spectral_inputs(&s, &a.bound);
    let m_size = a.m.unwrap_or(s.train.len());
    let steps = a.steps.unwrap_or_else(|| s.sgd.steps(m_size));

    // Without --loss-bound, M comes from the weights a real run reaches.
    let mut diverged_at = None;
    let loss_bound = match a.bound.loss_bound {
        Some(v) => v,
        None => match sgd_train(&s.train, &s.test, &s.obj, &s.sgd, &s.init) {
            Ok(run) => {
                let observed = s.all.iter().map(|z| s.obj.loss(z, &run.theta)).fold(0.0, f64::max);
                s.obj.loss.default_bound(s.g_lambda, l2(&run.theta)).max(observed)
            }
            Err(RunError::Diverged { step, .. }) => {
                diverged_at = Some(step);
                f64::INFINITY
            }
            Err(RunError::Invalid(e)) => return Err(e),
        },
    };
    let inputs = BoundInputs {
        eta: s.sgd.eta,
        loss: s.obj.loss_constants(),
        act: s.obj.act_constants(),
        lambda: spectral.lambda(),
        lambda_source: spectral.source,
        steps,
        m: m_size,
        loss_bound: if loss_bound.is_finite() { loss_bound } else { 0.0 },
        delta: a.bound.delta,
    };
    let beta = beta_bound(&inputs)?;
    let gap_bound = if loss_bound.is_finite() && beta.is_finite() {
        gen_gap_bound(beta, m_size, loss_bound, a.bound.delta)?
    } else {
        f64::INFINITY
    };
    let (act, loss) = (inputs.act, inputs.loss);
    let out = json!({
        "beta_m": json_f64(beta),
        "gap_bound": json_f64(gap_bound),
        "lambda_source": spectral.source.as_str(),
        "g_lambda": json_f64(s.g_lambda),
        "lambda_max": json_f64(s.lambda_max),
        "T": steps,
        "m": m_size,
        "M": json_f64(loss_bound),
        "delta": a.bound.delta,
        "constants": {
            "alpha_sigma": act.alpha,
            "nu_sigma": act.nu,
            "alpha_ell": loss.alpha,
            "nu_ell": loss.nu,
        },
        "assumptions_hold": s.obj.loss.satisfies_assumptions(),
    });
    let mut m = base_manifest("bound", argv, a, &l);
    fill_model(&mut m, &s, &a.sgd);
    m.constants.loss_bound = Some(json_f64(loss_bound));
    m.summary = json!({ "diverged_at_step": diverged_at });
    emit(&json_bytes(&out), a.out.as_deref(), &mut m)?;
    Ok(match diverged_at {
        Some(step) => diverged(step),
        None => Outcome::Ok,
    })
}

fn stability(a: &StabilityArgs, argv: Vec<String>) -> Result<Outcome> {
    let l = load(&a.data)?;
    let s = setup(&l.ds, &a.model, &a.sgd)?;
    let spectral = spectral_inputs(&s, &a.bound);
    let cfg = StabilityConfig { sgd: s.sgd, perturbations: a.perturbations, seeds: a.seeds, delta: a.bound.delta };
    let eval: Vec<Sample> = s.train.iter().chain(&s.test).cloned().collect();
    let r = empirical_stability(&s.train, &s.test, &eval, &s.obj, &cfg, &s.init, spectral)?;
    let b = &r.bound_inputs;
    let perts: Vec<Value> = r
        .perturbations
        .iter()
        .map(|p| {
            json!({
                "index": p.index,
                "replacement_node": p.replacement_node,
                "beta_hat": json_f64(p.beta_hat),
                "diverged_runs": p.diverged_runs,
            })
        })
        .collect();
    let out = json!({
        "beta_hat": json_f64(r.beta_hat),
        "beta_m": json_f64(r.beta_m),
        "two_beta_m": json_f64(r.two_beta_m),
        "ratio": json_f64(r.ratio),
        "dominated": r.dominated(1e-9),
        "lambda_source": b.lambda_source.as_str(),
        "g_lambda": json_f64(s.g_lambda),
        "lambda_max": json_f64(s.lambda_max),
        "T": b.steps,
        "m": b.m,
        "seeds": r.seeds,
        "eval_points": r.eval_points,
        "perturbations": perts,
        "assumptions_hold": s.obj.loss.satisfies_assumptions(),
    });
    let mut m = base_manifest("stability", argv, a, &l);
    fill_model(&mut m, &s, &a.sgd);
    m.seeds = (0..a.seeds as u64).map(|r| a.sgd.seed.wrapping_add(r)).collect();
    emit(&json_bytes(&out), a.out.as_deref(), &mut m)?;
    if r.beta_hat.is_finite() {
        Ok(Outcome::Ok)
    } else {
        eprintln!("diverged: at least one perturbed run produced non-finite weights");
        Ok(Outcome::Diverged)
    }
}
