//! Acceptance suite. Each criterion prints one `PASS` or `FAIL` line; the
//! binary exits non-zero if any criterion fails.
//!
//! Run a subset with `cargo test --test acceptance -- c5 c7`.

#[path = "../../core/tests/support/vo2_oracle.rs"]
mod vo2_oracle;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use physio_core::autodiff::gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
use physio_core::autodiff::{
    gru_forward, mlp_forward, AutodiffError, GruSpec, MlpSpec, OutputTransform, ParamStore, Tape,
    Tensor, Var,
};
use physio_core::hr_models::{
    hr_forward, ode_integrate, HrBounds, HrConfig, HrError, HrInit, HrModelKind,
};
use physio_core::ingest::{savgol_smooth, TargetStats};
use physio_core::training::{
    aux_loss_vo2, clip_value, curriculum, dynamic_loss, masked_mae, TrainError,
};
use physio_core::vo2_model::{vo2_forward, Vo2Config};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.gen_range(-scale..scale))
            .collect(),
    )
}

fn consts(tape: &mut Tape, xs: &[Tensor]) -> Vec<Var> {
    xs.iter().map(|x| tape.constant(x.clone())).collect()
}

fn sq_err(tape: &mut Tape, pred: Var, target: &Tensor) -> Var {
    let y = tape.constant(target.clone());
    let d = tape.sub(pred, y);
    let sq = tape.mul(d, d);
    tape.mean(sq)
}

// ---------------------------------------------------------------- 1

struct Worst {
    label: String,
    rel: f64,
    checked: usize,
}

impl Worst {
    fn new() -> Self {
        Self {
            label: String::new(),
            rel: 0.0,
            checked: 0,
        }
    }

    /// Records the report, noting a failure when it exceeds `tol`.
    fn add(&mut self, label: &str, r: &GradCheckReport, tol: f64, failures: &mut Vec<String>) {
        self.checked += r.checked;
        if r.max_rel_err / tol > self.rel {
            self.rel = r.max_rel_err / tol;
            self.label = format!("{label} {:.2e} (tol {tol:.0e})", r.max_rel_err);
        }
        if r.checked == 0 || r.max_rel_err >= tol {
            failures.push(format!("{label}: {r:?}"));
        }
    }
}

fn c1_gradient_integrity() -> Outcome {
    let start = Instant::now();
    let opts = GradCheckOptions::default();
    let mut worst = Worst::new();
    let mut failures = Vec::new();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        for transform in [
            OutputTransform::Identity,
            OutputTransform::Softplus,
            OutputTransform::Sigmoid,
        ] {
            let spec = MlpSpec::two_layer(4, 5, 2, 0.0, transform);
            let mut store = ParamStore::new(seed);
            spec.init("head", &mut store, &mut rng);
            let x = rand_tensor(&mut rng, 2, 4, 1.5);
            let r = check_gradients(&store, opts, |tape: &mut Tape, pv| {
                let xv = tape.constant(x.clone());
                let y = mlp_forward(tape, &spec, pv, "head", xv)?;
                let sq = tape.mul(y, y);
                Ok::<_, AutodiffError>(tape.sum(sq))
            })
            .unwrap();
            worst.add(
                &format!("seed {seed} head {transform:?}"),
                &r,
                1e-4,
                &mut failures,
            );
        }

        for bidirectional in [false, true] {
            let spec = GruSpec {
                input_dim: 3,
                hidden_dim: 3,
                num_layers: 2,
                bidirectional,
            };
            let mut store = ParamStore::new(seed);
            spec.init("gru", &mut store, &mut rng);
            let steps: Vec<Tensor> = (0..4).map(|_| rand_tensor(&mut rng, 2, 3, 1.5)).collect();
            let w = rand_tensor(
                &mut rng,
                2,
                4 * spec.hidden_dim * if bidirectional { 2 } else { 1 },
                1.0,
            );
            let r = check_gradients(&store, opts, |tape: &mut Tape, pv| {
                let seq = consts(tape, &steps);
                let out = gru_forward(tape, &spec, pv, "gru", &seq, None)?;
                let all = tape.concat(&out.states);
                let wv = tape.constant(w.clone());
                let p = tape.mul(all, wv);
                Ok::<_, AutodiffError>(tape.sum(p))
            })
            .unwrap();
            let label = if bidirectional { "biGRU" } else { "GRU" };
            worst.add(&format!("seed {seed} {label}"), &r, 1e-4, &mut failures);
        }

        for kind in [HrModelKind::Ode, HrModelKind::Kalman] {
            let mut cfg = HrConfig::new(kind, 3, 3, 1);
            cfg.head_hidden = 3;
            cfg.backbone.dropout = 0.0;
            let store = cfg.init_params(seed);
            let steps: Vec<Tensor> = (0..2).map(|_| rand_tensor(&mut rng, 2, 3, 1.5)).collect();
            let init = HrInit {
                h0: rand_tensor(&mut rng, 2, 1, 1.0),
                hdot0: None,
            };
            let target = rand_tensor(&mut rng, 2, 2, 1.0);
            let bounds = HrBounds {
                lo: -50.0,
                hi: 50.0,
            };
            let r = check_gradients(&store, opts, |tape: &mut Tape, pv| {
                let xs = consts(tape, &steps);
                let f = hr_forward(tape, &cfg, pv, &xs, &init, bounds, None)?;
                Ok::<_, HrError>(sq_err(tape, f.pred, &target))
            })
            .unwrap();
            worst.add(
                &format!("seed {seed} HR {kind:?} 2-step"),
                &r,
                1e-3,
                &mut failures,
            );
        }

        let learned = seed % 2 == 1;
        let mut cfg = Vo2Config::new(3, 3, 1);
        cfg.head_hidden = 3;
        cfg.backbone.dropout = 0.0;
        cfg.learned_schedules = learned;
        let store = cfg.init_params(seed);
        let rows: Vec<Tensor> = (0..6).map(|_| rand_tensor(&mut rng, 1, 3, 1.5)).collect();
        let target = rand_tensor(&mut rng, 1, 6, 1.0);
        let mask = Tensor::full(&[1, 6], 1.0);
        let y0 = Tensor::matrix(1, 1, vec![target.values()[0]]);
        let w = curriculum(10);
        let r = check_gradients(&store, opts, |tape: &mut Tape, pv| {
            let xs = consts(tape, &rows);
            let out = vo2_forward(tape, &cfg, pv, &xs, Some(&y0), 0.05)?;
            let base = masked_mae(tape, out.y_seq, &target, &mask)?;
            let dynamic = dynamic_loss(tape, out.y_seq, &target, w.alpha_dyn)?;
            let aux = aux_loss_vo2(tape, &out, &target)?;
            let b = tape.scale(base, w.w_base);
            let d = tape.scale(dynamic, w.w_dynamic);
            let a = tape.scale(aux, w.w_aux);
            let bd = tape.add(b, d);
            Ok::<_, TrainError>(tape.add(bd, a))
        })
        .unwrap();
        worst.add(
            &format!("seed {seed} VO2 composite (learned {learned})"),
            &r,
            1e-3,
            &mut failures,
        );
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "100 seeds, {} entries, worst {}, {secs:.0} s",
        worst.checked, worst.label
    );
    if !failures.is_empty() {
        return Err(format!("{detail}; first failure {}", failures[0]));
    }
    check(secs < 300.0, detail)
}

// ---------------------------------------------------------------- 2

fn c2_filter_invariants() -> Outcome {
    let mut violations: Vec<String> = Vec::new();
    let mut note = |ok: bool, what: String| {
        if !ok {
            violations.push(what);
        }
    };
    let target = TargetStats {
        mean: 140.0,
        std: 25.0,
    };

    for kind in [HrModelKind::Kalman, HrModelKind::Ode] {
        let mut cfg = HrConfig::new(kind, 3, 4, 1);
        cfg.head_hidden = 4;
        cfg.backbone.dropout = 0.0;
        let bounds = HrBounds::new(&cfg, &target);
        for seed in 0..1000u64 {
            let store = cfg.init_params(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(50_000 + seed);
            let steps: Vec<Tensor> = (0..10).map(|_| rand_tensor(&mut rng, 1, 3, 3.0)).collect();
            let init = HrInit {
                h0: Tensor::matrix(1, 1, vec![rng.gen_range(bounds.lo..bounds.hi)]),
                hdot0: None,
            };
            let mut tape = Tape::new();
            let pv = store.bind(&mut tape);
            let xs = consts(&mut tape, &steps);
            let f = hr_forward(&mut tape, &cfg, &pv, &xs, &init, bounds, None).unwrap();
            let (lo, hi) = (
                tape.value(f.latent_bounds.0).item(),
                tape.value(f.latent_bounds.1).item(),
            );
            for g in &f.latent {
                let g = tape.value(*g).item();
                note(
                    g >= lo && g <= hi,
                    format!("{kind:?} {seed}: latent {g} outside [{lo}, {hi}]"),
                );
            }
            for v in tape.value(f.pred).values() {
                let bpm = target.denormalize(*v);
                note(
                    (cfg.hr_min_bpm - 1e-9..=cfg.hr_max_bpm + 1e-9).contains(&bpm),
                    format!("{kind:?} {seed}: HR {bpm} bpm outside bounds"),
                );
            }
            // The covariance entering the first step is the initial one, P⁻ − Q.
            let mut p_prev = f.kalman_states.first().map(|first| {
                let p_pred = tape.value(first.p_pred.unwrap()).values().to_vec();
                let q = tape.value(first.q.unwrap()).values().to_vec();
                p_pred
                    .iter()
                    .zip(&q)
                    .map(|(a, b)| a - b)
                    .collect::<Vec<f64>>()
            });
            for st in &f.kalman_states {
                let k = tape.value(st.gain.unwrap()).item();
                note(k > 0.0 && k < 1.0, format!("HR {seed}: gain {k}"));
                let p = tape.value(st.p).values().to_vec();
                let p_pred = tape.value(st.p_pred.unwrap()).values().to_vec();
                let prev = p_prev.take().unwrap();
                for i in 0..p.len() {
                    note(p[i] > 0.0, format!("HR {seed}: variance {}", p[i]));
                    note(
                        p_pred[i] > prev[i],
                        format!("HR {seed}: prior {} vs {}", p_pred[i], prev[i]),
                    );
                    note(
                        p[i] <= p_pred[i],
                        format!("HR {seed}: post {} > prior {}", p[i], p_pred[i]),
                    );
                }
                p_prev = Some(p);
            }
        }
    }

    for seed in 0..1000u64 {
        let mut cfg = Vo2Config::new(3, 3, 1);
        cfg.head_hidden = 3;
        cfg.backbone.dropout = 0.0;
        cfg.learned_schedules = seed % 2 == 1;
        let store = cfg.init_params(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(90_000 + seed);
        let rows: Vec<Tensor> = (0..15).map(|_| rand_tensor(&mut rng, 1, 3, 3.0)).collect();
        let y0 = (seed % 3 == 0).then(|| Tensor::matrix(1, 1, vec![rng.gen_range(-2.0..2.0)]));
        let mut tape = Tape::new();
        let pv = store.bind(&mut tape);
        let xs = consts(&mut tape, &rows);
        let out = vo2_forward(&mut tape, &cfg, &pv, &xs, y0.as_ref(), 0.05).unwrap();
        let dmax = tape.value(out.params.delta_max).item();
        let limit = out
            .params
            .delta_min
            .map_or(dmax, |v| dmax.max(tape.value(v).item()));
        for (i, d) in out.diag.iter().enumerate() {
            let k = tape.value(d.gain).item();
            note(k > 0.0 && k < 1.0, format!("VO2 {seed}: gain {k}"));
            let prev = tape.value(out.posterior_var[i]).item();
            let prior = tape.value(d.p_prior).item();
            let post = tape.value(out.posterior_var[i + 1]).item();
            note(
                prev > 0.0 && post > 0.0,
                format!("VO2 {seed}: variance {prev} / {post}"),
            );
            note(prior > prev, format!("VO2 {seed}: prior {prior} vs {prev}"));
            note(
                post <= prior,
                format!("VO2 {seed}: post {post} > prior {prior}"),
            );
            let nu = tape.value(d.clamped_innovation).item();
            note(
                nu.abs() <= limit,
                format!("VO2 {seed}: |innovation| {nu} > {limit}"),
            );
        }
    }
    let detail = format!(
        "1000 rollouts each for HR Kalman, HR ODE, VO2; {} violations",
        violations.len()
    );
    match violations.first() {
        None => Ok(detail),
        Some(v) => Err(format!("{detail}; first: {v}")),
    }
}

// ---------------------------------------------------------------- 3

fn c3_schedules() -> Outcome {
    let mut bad = Vec::new();
    let mut eq = |what: &str, got: f64, want: f64| {
        if got.to_bits() != want.to_bits() {
            bad.push(format!("{what} = {got:?}, expected {want:?}"));
        }
    };
    let c0 = curriculum(0);
    eq("curriculum(0).base", c0.w_base, 1.0);
    eq("curriculum(0).dynamic", c0.w_dynamic, 0.0);
    eq("curriculum(0).aux", c0.w_aux, 0.1);
    let c20 = curriculum(20);
    eq("curriculum(20).base", c20.w_base, 0.3);
    eq("curriculum(20).dynamic", c20.w_dynamic, 0.7);
    eq("curriculum(20).aux", c20.w_aux, 0.3);
    eq("clip_value(0)", clip_value(0), 5.0);
    eq(
        "clip_value(10)",
        clip_value(10),
        1.0 + 4.0 * (-1.0f64).exp(),
    );
    let cfg = Vo2Config::new(3, 8, 1);
    eq("alpha(0)", cfg.blend_alpha(0), 0.6);
    eq("alpha(5)", cfg.blend_alpha(5), 0.3);
    for t in [10, 11, 30, 59] {
        eq(&format!("alpha({t})"), cfg.blend_alpha(t), 0.0);
    }
    let detail = "curriculum(0/20), clip_value(0/10), blend alpha(0/5/>=10)".to_string();
    if bad.is_empty() {
        Ok(format!("{detail} bit-exact"))
    } else {
        Err(format!("{detail}: {}", bad.join("; ")))
    }
}

// ---------------------------------------------------------------- 4

fn c4_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut kf_err = 0.0f64;
    for case in 0..50u64 {
        let mut cfg = Vo2Config::new(
            rng.gen_range(2..5),
            rng.gen_range(2..6),
            rng.gen_range(1..3),
        );
        cfg.head_hidden = rng.gen_range(2..6);
        cfg.backbone.dropout = 0.0;
        cfg.learned_schedules = rng.gen_bool(0.5);
        let store = cfg.init_params(1_000 + case);
        let t_len = rng.gen_range(2..25);
        let d_in = cfg.backbone.input_dim;
        let rows: Vec<Vec<f64>> = (0..t_len)
            .map(|_| (0..d_in).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let y0 = rng.gen_bool(0.5).then(|| rng.gen_range(-1.0..1.0));
        let floor = rng.gen_range(0.01..0.5);
        let mut tape = Tape::new();
        let pv = store.bind(&mut tape);
        let xs: Vec<Var> = rows
            .iter()
            .map(|r| tape.constant(Tensor::matrix(1, d_in, r.clone())))
            .collect();
        let y0t = y0.map(|v| Tensor::matrix(1, 1, vec![v]));
        let out = vo2_forward(&mut tape, &cfg, &pv, &xs, y0t.as_ref(), floor).unwrap();
        let got = tape.value(out.y_seq).values().to_vec();
        let want = vo2_oracle::oracle_forward(&store, &cfg, &rows, y0, floor);
        if got.len() != want.len() {
            return Err(format!(
                "case {case}: length {} vs {}",
                got.len(),
                want.len()
            ));
        }
        for (a, b) in got.iter().zip(&want) {
            kf_err = kf_err.max((a - b).abs());
        }
    }

    let mut sg_err = 0.0f64;
    for _ in 0..50 {
        let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let n = rng.gen_range(30..120);
        let cubic: Vec<f64> = (0..n)
            .map(|i| {
                let x = i as f64 / 10.0;
                c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x
            })
            .collect();
        let out = savgol_smooth(&cubic, 15, 3).unwrap();
        for i in 7..n - 7 {
            sg_err = sg_err.max((out[i] - cubic[i]).abs());
        }
    }

    // dg/dt = d − g from g0 over 10 steps at dt 0.05.
    let (g0, d, dt) = (0.0, 1.7, 0.05);
    let mut tape = Tape::new();
    let g = tape.constant(Tensor::matrix(1, 1, vec![g0]));
    let ds: Vec<Var> = (0..10)
        .map(|_| tape.constant(Tensor::matrix(1, 1, vec![d])))
        .collect();
    let traj = ode_integrate(&mut tape, &ds, g, dt);
    let mut rk_rel = 0.0f64;
    for (k, v) in traj.iter().enumerate().skip(1) {
        let exact = d + (g0 - d) * (-(k as f64) * dt).exp();
        rk_rel = rk_rel.max((tape.value(*v).item() - exact).abs() / exact.abs());
    }

    let detail = format!(
        "VO2 batched vs scalar max |diff| {kf_err:.1e} (50 configs); S-G cubic interior {sg_err:.1e}; RK4 rel {rk_rel:.1e} (dt 0.05, 10 steps)"
    );
    check(kf_err <= 1e-10 && sg_err <= 1e-9 && rk_rel <= 1e-6, detail)
}

// ---------------------------------------------------------------- CLI fixture

fn physio(args: &[&str]) -> Result<String, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_physio"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(String::from_utf8_lossy(&o.stdout).into_owned())
    } else {
        Err(format!(
            "physio {args:?} exited {:?}: {}",
            o.status.code(),
            String::from_utf8_lossy(&o.stderr)
        ))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn metrics(dir: &Path) -> Result<Value, String> {
    let path = dir.join("metrics.json");
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn agg(m: &Value, group: &str, table: &str, field: &str) -> Result<f64, String> {
    m[group][table]["aggregate"][field]
        .as_f64()
        .ok_or_else(|| format!("metrics.json has no {group}.{table}.aggregate.{field}"))
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

fn workspace() -> &'static Workspace {
    static W: OnceLock<Workspace> = OnceLock::new();
    W.get_or_init(|| {
        let dir = tempfile::tempdir().expect("temp dir");
        let root = dir.path().to_path_buf();
        Workspace { _dir: dir, root }
    })
}

/// 10 runners x 2 sessions x 10 min.
fn cohort() -> Result<&'static PathBuf, String> {
    static C: OnceLock<Result<PathBuf, String>> = OnceLock::new();
    C.get_or_init(|| {
        let data = workspace().root.join("cohort");
        physio(&[
            "synth",
            "--out",
            s(&data),
            "--seed",
            "1",
            "--runners",
            "10",
            "--sessions",
            "2",
            "--min-duration",
            "600",
            "--max-duration",
            "600",
        ])?;
        Ok(data)
    })
    .as_ref()
    .map_err(Clone::clone)
}

struct Run {
    checkpoints: PathBuf,
    eval: PathBuf,
    train_secs: f64,
}

fn train_and_eval(name: &str, train_args: &[&str]) -> Result<Run, String> {
    let data = cohort()?;
    let root = &workspace().root;
    let checkpoints = root.join(format!("{name}_train"));
    let eval = root.join(format!("{name}_eval"));
    let start = Instant::now();
    let mut args = vec![
        "train",
        "--data",
        s(data),
        "--out",
        s(&checkpoints),
        "--seed",
        "7",
    ];
    args.extend_from_slice(train_args);
    physio(&args)?;
    let train_secs = start.elapsed().as_secs_f64();
    physio(&["eval", "--checkpoints", s(&checkpoints), "--out", s(&eval)])?;
    Ok(Run {
        checkpoints,
        eval,
        train_secs,
    })
}

/// 128-4-shaped VO2 model at hidden 32, leave-one-runner-out.
fn vo2_run() -> Result<&'static Run, String> {
    static R: OnceLock<Result<Run, String>> = OnceLock::new();
    R.get_or_init(|| {
        train_and_eval(
            "vo2",
            &[
                "--model",
                "vo2",
                "--preset",
                "128-4",
                "--hidden",
                "32",
                "--k-holdout",
                "1",
                "--epochs",
                "15",
                "--stride",
                "60",
            ],
        )
    })
    .as_ref()
    .map_err(Clone::clone)
}

/// 128-2-shaped HR models at hidden 32, leave-three-runners-out, every
/// remaining runner used for training.
fn hr_run(kind: &str) -> Result<&'static Run, String> {
    static ODE: OnceLock<Result<Run, String>> = OnceLock::new();
    static KALMAN: OnceLock<Result<Run, String>> = OnceLock::new();
    let (cell, extra): (_, &[&str]) = match kind {
        "hr_ode" => (&ODE, &["--epochs", "40", "--ode-dt", "0.02"]),
        _ => (&KALMAN, &["--epochs", "60"]),
    };
    cell.get_or_init(|| {
        let mut args = vec![
            "--model",
            kind,
            "--preset",
            "128-2",
            "--hidden",
            "32",
            "--val-runners",
            "0",
        ];
        args.extend_from_slice(extra);
        train_and_eval(kind, &args)
    })
    .as_ref()
    .map_err(Clone::clone)
}

// ---------------------------------------------------------------- 5

fn c5_vo2_end_to_end() -> Outcome {
    let start = Instant::now();
    let run = vo2_run()?;
    let m = metrics(&run.eval)?;
    let mape = agg(&m, "tables", "vo2", "mape_pct")?;
    let persistence = agg(&m, "baselines", "persistence", "mape_pct")?;
    let gain = 1.0 - mape / persistence;
    let secs = start.elapsed().as_secs_f64();
    check(
        mape < 15.0 && gain >= 0.30 && secs < 900.0,
        format!(
            "held-out MAPE {mape:.2}% (< 15%), persistence {persistence:.2}%, relative gain {:.0}% (>= 30%), train {:.0} s, total {secs:.0} s",
            gain * 100.0,
            run.train_secs
        ),
    )
}

// ---------------------------------------------------------------- 6

fn c6_hr_end_to_end() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for kind in ["hr_ode", "hr_kalman"] {
        let run = hr_run(kind)?;
        let m = metrics(&run.eval)?;
        let standard = agg(&m, "tables", "standard", "mae")?;
        let generative = agg(&m, "tables", "generative", "mae")?;
        let baseline = agg(&m, "baselines", "window_mean", "mae")?;
        ok &= standard < generative && standard < baseline;
        parts.push(format!(
            "{kind}: standard {standard:.2} < generative {generative:.2} bpm {}, vs window-mean {baseline:.2} bpm {}",
            standard < generative,
            standard < baseline
        ));
    }
    check(ok, parts.join("; "))
}

// ---------------------------------------------------------------- 7

fn c7_predicted_hr_degrades() -> Outcome {
    let vo2 = vo2_run()?;
    let ode = hr_run("hr_ode")?;
    let out = workspace().root.join("vo2_eval_ode_pred");
    physio(&[
        "eval",
        "--checkpoints",
        s(&vo2.checkpoints),
        "--out",
        s(&out),
        "--hr-source",
        "ode_pred",
        "--hr-checkpoints",
        s(&ode.checkpoints),
    ])?;
    let truth = agg(&metrics(&vo2.eval)?, "tables", "vo2", "mape_pct")?;
    let pred = agg(&metrics(&out)?, "tables", "vo2", "mape_pct")?;
    check(
        pred >= truth,
        format!("MAPE with ODE-predicted HR {pred:.2}% >= true HR {truth:.2}%"),
    )
}

// ---------------------------------------------------------------- 8

fn c8_determinism() -> Outcome {
    let data = cohort()?;
    let root = &workspace().root;
    let mut compared = 0;
    for model in ["vo2", "hr_ode", "hr_kalman"] {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let ck = root.join(format!("det_{model}_{rep}"));
            let ev = root.join(format!("det_{model}_{rep}_eval"));
            physio(&[
                "train",
                "--data",
                s(data),
                "--out",
                s(&ck),
                "--model",
                model,
                "--hidden",
                "8",
                "--layers",
                "1",
                "--epochs",
                "3",
                "--seed",
                "11",
                "--jobs",
                "2",
            ])?;
            physio(&["eval", "--checkpoints", s(&ck), "--out", s(&ev)])?;
            let metrics = std::fs::read(ev.join("metrics.json")).map_err(|e| e.to_string())?;
            let summary = std::fs::read(ck.join("summary.json")).map_err(|e| e.to_string())?;
            outputs.push((metrics, summary));
        }
        if outputs[0] != outputs[1] {
            return Err(format!(
                "{model}: rerun changed metrics.json or summary.json"
            ));
        }
        compared += 1;
    }
    Ok(format!(
        "{compared} train+eval pipelines rerun; metrics.json and summary.json byte-identical"
    ))
}

// ---------------------------------------------------------------- driver

type Criterion = (&'static str, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 8] = [
    ("c1", "gradient integrity", c1_gradient_integrity),
    ("c2", "filter invariants", c2_filter_invariants),
    ("c3", "schedule exactness", c3_schedules),
    ("c4", "oracle equivalence", c4_oracles),
    ("c5", "synthetic end-to-end VO2", c5_vo2_end_to_end),
    ("c6", "synthetic end-to-end HR", c6_hr_end_to_end),
    ("c7", "predicted-HR degradation", c7_predicted_hr_degrades),
    ("c8", "determinism", c8_determinism),
];

fn main() {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    // `cargo test -- --list` style discovery.
    if std::env::args().any(|a| a == "--list") {
        for (id, name, _) in CRITERIA {
            println!("{id} {name}: test");
        }
        return;
    }
    let mut failed = 0;
    for (id, name, f) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|x| id == x || name.contains(x.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {id} {name}: {d} [{secs:.1} s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL {id} {name}: {d} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
