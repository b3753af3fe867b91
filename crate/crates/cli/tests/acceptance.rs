//! Acceptance suite. Each criterion prints one line; any failure or
//! overrun of its time limit makes the process exit nonzero.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use rand::Rng as _;

use concern_dp::concern::{derive_label, gold_score, ConcernLabel, ScoreBounds, TraitLabels, TraitScores, WeightVector};
use concern_dp::learners::{mlp_backward, smote, Activation, Matrix, MlpGradients, MlpParams};
use concern_dp::ledger::{BudgetLedger, Capacities, LedgerMode};
use concern_dp::mechanisms::{
    counting_query, laplace_mechanism, verify_dp_ratio, DatabaseView, NoiseSpec, Row, VerifyParams,
};
use concern_dp::pipeline::{
    attach_scores, simulation_data, train_model, FeaturePipeline, ModelKind, Resources, SplitInfo, TrainOptions,
    TrainReport,
};
use concern_dp::simulation::{
    compare_controllers, curve_distance, run_simulation, run_simulation_detailed, write_distance_table, Controller,
    ScoreSource, SimConfig, SimData, Task,
};
use concern_dp::synth::{gen_users, GenSpec, UserRecord};
use concern_dp::{rng_from_seed, Rng};

type Check = fn() -> Result<String>;
/// Stdout of each command and the files a round wrote.
type RoundOutput = (Vec<String>, BTreeMap<String, Vec<u8>>);

fn main() -> ExitCode {
    let criteria: [(&str, u64, Check); 11] = [
        ("budget additivity", 1, budget_additivity),
        ("global collapse", 10, global_collapse),
        ("dp verification", 30, dp_verification),
        ("smote counts", 5, smote_counts),
        ("label table", 1, label_table),
        ("gold score", 1, gold_score_checks),
        ("mlp gradient check", 30, mlp_gradient_check),
        ("regression sanity", 120, regression_sanity),
        ("classification vs majority", 120, classification_vs_majority),
        ("controller ordering", 60, controller_ordering),
        ("cli determinism", 60, cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check));
        let took = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(Ok(d)) if took <= Duration::from_secs(*limit) => (true, d),
            Ok(Ok(d)) => (false, format!("{d}; over time limit")),
            Ok(Err(e)) => (false, format!("{e:#}")),
            Err(p) => (
                false,
                p.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into()),
            ),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} {name} ({:.2}s / {limit}s): {detail}",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("r{i}")).collect()
}

fn budget_additivity() -> Result<String> {
    let mut rng = rng_from_seed(1);
    let mut charges = 0usize;
    let mut worst = 0.0f64;
    for seq in 0..10_000 {
        let mode = if seq % 2 == 0 { LedgerMode::Global } else { LedgerMode::PerRecord };
        let all = ids(rng.random_range(1..=6));
        let cap = rng.random_range(0.1..5.0);
        let mut ledger = BudgetLedger::new(mode, &all, &Capacities::Uniform(cap))?;
        // Oracle state: one shared slot or one slot per record.
        let mut spent = vec![0.0f64; if mode == LedgerMode::Global { 1 } else { all.len() }];
        let mut expected = 0.0;
        for _ in 0..rng.random_range(1..=40) {
            let eps = rng.random_range(0.001..1.0);
            let pick: Vec<usize> = (0..all.len()).filter(|_| rng.random_bool(0.7)).collect();
            let req: Vec<String> = pick.iter().map(|&i| all[i].clone()).collect();
            let out = ledger.charge(&req, eps)?;
            let mut want = Vec::new();
            match mode {
                LedgerMode::Global => {
                    if !req.is_empty() && spent[0] + eps <= cap {
                        spent[0] += eps;
                        expected += eps;
                        want = req.clone();
                    }
                }
                LedgerMode::PerRecord => {
                    for &i in &pick {
                        if spent[i] + eps <= cap {
                            spent[i] += eps;
                            expected += eps;
                            want.push(all[i].clone());
                        }
                    }
                }
            }
            ensure!(out.granted == want, "sequence {seq}: granted {:?}, oracle {:?}", out.granted, want);
            charges += 1;
        }
        let err = (ledger.total_spent() - expected).abs();
        worst = worst.max(err);
        ensure!(err <= 1e-12, "sequence {seq}: spent {} vs {expected}", ledger.total_spent());
    }
    Ok(format!("10000 sequences, {charges} charges, max error {worst:.1e}"))
}

fn small_sim_data(n: usize, seed: u64) -> Result<SimData> {
    let mut rng = rng_from_seed(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let gold = rows.iter().map(|r| (0.45 + 0.2 * r[0]).clamp(0.0, 1.0)).collect();
    let ext = rows.iter().map(|r| r[1] > 0.0).collect();
    Ok(SimData::new(ids(n), &Matrix::from_rows(&rows)?, gold, ext)?)
}

fn global_collapse() -> Result<String> {
    let data = small_sim_data(40, 2)?;
    let mut rng = rng_from_seed(2);
    let mut pairs = 0;
    while pairs < 20 {
        let c: f64 = rng.random_range(0.5..5.0);
        let e: f64 = rng.random_range(0.05..0.5);
        let q = c / e;
        if (q - q.round()).abs() < 1e-6 {
            continue;
        }
        let jump = q.ceil() as usize;
        for task in [Task::Classification, Task::Regression] {
            let cfg = SimConfig {
                eps_per_query: e,
                iterations: jump + 10,
                task,
                folds: 5,
                seed: pairs as u64,
            };
            let t = run_simulation(&data, &Controller::Global { capacity: c }, &cfg)?;
            ensure!(t.rows.len() >= jump, "C={c} e={e}: trace ends at {}", t.rows.len());
            for r in &t.rows {
                let expect = if r.iteration < jump { 0.0 } else { 1.0 };
                ensure!(
                    r.oobudget_ratio == expect,
                    "C={c} e={e}: ratio {} at iteration {}, jump expected at {jump}",
                    r.oobudget_ratio,
                    r.iteration
                );
                if r.iteration >= jump {
                    ensure!(r.utility_value == 0.0, "C={c} e={e}: utility {} after collapse", r.utility_value);
                }
            }
        }
        pairs += 1;
    }
    Ok("20 (C, e) pairs jump 0 -> 1 at ceil(C/e), both tasks".into())
}

fn adjacent() -> Result<(DatabaseView, DatabaseView)> {
    let rows = (0..100).map(|i| Row::new(format!("r{i}"), vec![(i % 2) as f64])).collect();
    let d1 = DatabaseView::new(rows)?;
    let d2 = d1.with_row(0, Row::new("r0", vec![1.0]))?;
    Ok((d1, d2))
}

fn dp_verification() -> Result<String> {
    let (d1, d2) = adjacent()?;
    let is_one = |p: &[f64]| p[0] > 0.5;
    let mut notes = Vec::new();
    for eps in [0.1, 1.0] {
        let params = VerifyParams {
            epsilon: eps,
            delta: 0.0,
            samples: 1_000_000,
            seed: 3,
            ..Default::default()
        };
        let spec = NoiseSpec::new(eps, 1.0)?;
        let v = verify_dp_ratio(
            |db: &DatabaseView, rng: &mut Rng| laplace_mechanism(counting_query(db, is_one), &spec, rng),
            &d1,
            &d2,
            &params,
        )?;
        ensure!(v.pass, "laplace at eps {eps} rejected");
        notes.push(format!("laplace eps {eps} passes"));

        let v = verify_dp_ratio(|db: &DatabaseView, _: &mut Rng| Ok(counting_query(db, is_one)), &d1, &d2, &params)?;
        ensure!(!v.pass, "noiseless mechanism accepted at eps {eps}");
    }
    notes.push("noiseless fails".into());
    Ok(notes.join(", "))
}

fn default_users(seed: u64) -> Result<Vec<UserRecord>> {
    Ok(gen_users(&GenSpec {
        seed,
        ..GenSpec::default()
    })?)
}

fn smote_counts() -> Result<String> {
    let users = default_users(4)?;
    let refs: Vec<&UserRecord> = users.iter().collect();
    let res = Resources::default();
    let x = FeaturePipeline::fit(&refs, res)?.transform(&refs, res)?;
    let labels: Vec<usize> = users.iter().map(|u| u.concern_label.index()).collect();
    let mut before = [0usize; 3];
    labels.iter().for_each(|&l| before[l] += 1);
    ensure!(before == [9, 212, 29], "input counts {before:?}");
    let out = smote(&x, &labels, 5, 4)?;
    let mut after = [0usize; 3];
    out.labels.iter().for_each(|&l| after[l] += 1);
    ensure!(after == [212, 212, 212], "output counts {after:?}");
    Ok(format!("{before:?} -> {after:?}"))
}

fn label_table() -> Result<String> {
    let mut tally = BTreeMap::new();
    for bits in 0u32..32 {
        let l: [bool; 5] = std::array::from_fn(|i| bits >> i & 1 == 1);
        let [neu, opn, _con, agr, ext] = l;
        let oracle = if neu && opn && !agr && !ext {
            ConcernLabel::HiPC
        } else if !neu && !opn && agr && ext {
            ConcernLabel::LoPC
        } else {
            ConcernLabel::MePC
        };
        let got = derive_label(&TraitLabels(l));
        ensure!(got == oracle, "{l:?}: {got} vs oracle {oracle}");
        *tally.entry(got.as_str()).or_insert(0) += 1;
    }
    ensure!(
        tally["HiPC"] == 2 && tally["LoPC"] == 2 && tally["MePC"] == 28,
        "tally {tally:?}"
    );
    Ok(format!("{tally:?}"))
}

fn gold_score_checks() -> Result<String> {
    let v = WeightVector::default();
    let b = ScoreBounds::default();
    let top = gold_score(&TraitScores::new([5.0; 5], b)?, &v).value();
    ensure!((top - 0.764).abs() <= 1e-12, "all-5s score {top}");
    let mut rng = rng_from_seed(6);
    for _ in 0..100 {
        let s: [f64; 5] = std::array::from_fn(|_| rng.random_range(1.0..4.9));
        let base = gold_score(&TraitScores::new(s, b)?, &v).value();
        for t in 0..5 {
            let mut up = s;
            up[t] += 0.1;
            let bumped = gold_score(&TraitScores::new(up, b)?, &v).value();
            ensure!(bumped > base, "trait {t}: {bumped} <= {base} for {s:?}");
        }
    }
    Ok(format!("all-5s = {top}, 100 vectors strictly monotone"))
}

fn field(q: &mut MlpParams, which: usize) -> &mut Vec<f64> {
    match which {
        0 => &mut q.w1,
        1 => &mut q.b1,
        2 => &mut q.w2,
        _ => &mut q.b2,
    }
}

/// Central differences of the single-sample objective, one parameter at a time.
fn numeric_gradients(p: &MlpParams, x: &[f64], t: f64, l2: f64) -> MlpGradients {
    let step = 1e-5;
    let mut q = p.clone();
    let mut g: [Vec<f64>; 4] = Default::default();
    for (which, out) in g.iter_mut().enumerate() {
        for i in 0..field(&mut q, which).len() {
            let orig = field(&mut q, which)[i];
            field(&mut q, which)[i] = orig + step;
            let up = q.objective(x, t, l2);
            field(&mut q, which)[i] = orig - step;
            let down = q.objective(x, t, l2);
            field(&mut q, which)[i] = orig;
            out.push((up - down) / (2.0 * step));
        }
    }
    let [w1, b1, w2, b2] = g;
    MlpGradients { w1, b1, w2, b2 }
}

fn mlp_gradient_check() -> Result<String> {
    let acts = [Activation::Tanh, Activation::Sigmoid, Activation::Identity];
    let mut rng = rng_from_seed(7);
    let mut worst = 0.0f64;
    for trial in 0..50 {
        let k = rng.random_range(1..=12);
        let h = rng.random_range(1..=8);
        let hidden = acts[trial % 3];
        let output = acts[(trial / 3) % 3];
        let mut p = MlpParams::zeros(k, h, hidden, output);
        for w in p.w1.iter_mut().chain(&mut p.b1).chain(&mut p.w2).chain(&mut p.b2) {
            *w = rng.random_range(-0.5..0.5);
        }
        let x: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = rng.random_range(0.0..1.0);
        let l2 = rng.random_range(0.0..1e-2);
        let a = mlp_backward(&p, &x, t, l2)?;
        let n = numeric_gradients(&p, &x, t, l2);
        let err = [(&a.w1, &n.w1), (&a.b1, &n.b1), (&a.w2, &n.w2), (&a.b2, &n.b2)]
            .iter()
            .flat_map(|(u, v)| u.iter().zip(v.iter()))
            .map(|(u, v)| (u - v).abs() / u.abs().max(v.abs()).max(1e-6))
            .fold(0.0, f64::max);
        ensure!(err < 1e-4, "trial {trial}: relative error {err:.2e}");
        worst = worst.max(err);
    }
    Ok(format!("50 configurations, max relative error {worst:.2e}"))
}

fn regression(report: TrainReport) -> Result<concern_dp::pipeline::RegressionReport> {
    match report {
        TrainReport::Regression(r) => Ok(r),
        TrainReport::Classification(_) => bail!("expected a regression report"),
    }
}

fn regression_sanity() -> Result<String> {
    let users = default_users(0)?;
    let opts = TrainOptions::seeded(0);
    let res = Resources::default();
    let (mlp, report) = train_model(&users, ModelKind::Mlp, &opts, res)?;
    let mlp_test = regression(report)?.test.rmse;
    ensure!(mlp_test <= 0.10, "MLP test RMSE {mlp_test:.4}");

    let (lr, report) = train_model(&users, ModelKind::Lr, &opts, res)?;
    let lr_train = regression(report)?.train.rmse;
    let dim = lr.model.input_dim();
    let n_train = (users.len() as f64 * opts.train_fraction).round() as usize;
    ensure!(dim >= n_train, "feature dim {dim} < {n_train} samples");
    ensure!(lr_train < 1e-6, "LR train RMSE {lr_train:.2e}");
    ensure!(mlp.model.input_dim() == dim, "pipelines differ");
    Ok(format!(
        "MLP test RMSE {mlp_test:.4}, LR train RMSE {lr_train:.1e} (dim {dim}, {n_train} samples)"
    ))
}

fn classification_vs_majority() -> Result<String> {
    let users = default_users(0)?;
    let opts = TrainOptions::seeded(0);
    let mut notes = Vec::new();
    for kind in [ModelKind::Nb, ModelKind::Svm] {
        let (_, report) = train_model(&users, kind, &opts, Resources::default())?;
        let TrainReport::Classification(r) = report else {
            bail!("expected a classification report");
        };
        ensure!(r.cv_folds == 5, "{} folds", r.cv_folds);
        ensure!(
            r.cv_accuracy > r.majority_baseline,
            "{}: cv accuracy {:.3} <= majority {:.3}",
            kind.as_str(),
            r.cv_accuracy,
            r.majority_baseline
        );
        notes.push(format!(
            "{} cv {:.3} > majority {:.3} (held-out {:.3})",
            kind.as_str(),
            r.cv_accuracy,
            r.majority_baseline,
            r.test_accuracy
        ));
    }
    Ok(notes.join(", "))
}

fn controller_ordering() -> Result<String> {
    let users = default_users(0)?;
    let res = Resources::default();
    let split = SplitInfo {
        train_fraction: 0.8,
        seed: 0,
    };
    let (test, mut data) = simulation_data(&users, split, res)?;

    let long = SimConfig {
        iterations: 60,
        ..SimConfig::default()
    };
    let run = run_simulation_detailed(&data, &Controller::gold(), &long)?;
    ensure!(run.exhausted_at.len() == data.len(), "not every record exhausted");
    let mut by_gold: Vec<(f64, usize)> = data
        .ids()
        .iter()
        .zip(data.gold())
        .map(|(id, &g)| (g, run.exhausted_at[id]))
        .collect();
    by_gold.sort_by(|a, b| b.0.total_cmp(&a.0));
    for w in by_gold.windows(2) {
        ensure!(
            w[0].1 <= w[1].1,
            "gold {:.4} exhausts at {} after gold {:.4} at {}",
            w[0].0,
            w[0].1,
            w[1].0,
            w[1].1
        );
    }
    let gold_trace = run_simulation(&data, &Controller::gold(), &SimConfig::default())?;
    ensure!(curve_distance(&gold_trace, &gold_trace)? == 0.0, "gold self-distance nonzero");

    let opts = TrainOptions::seeded(0);
    for (kind, source) in [
        (ModelKind::Lr, ScoreSource::Lr),
        (ModelKind::Svr, ScoreSource::Svr),
        (ModelKind::Mlp, ScoreSource::Mlp),
    ] {
        let (bundle, _) = train_model(&users, kind, &opts, res)?;
        data = attach_scores(data, source, &bundle, split, &test, res)?;
    }
    let controllers = ["global", "random", "gold", "lr", "svr", "mlp"]
        .iter()
        .map(|n| Controller::parse(n, 0))
        .collect::<concern_dp::Result<Vec<_>>>()?;
    let report = compare_controllers(&data, &controllers, &SimConfig::default())?;
    for c in &report.controllers {
        ensure!(
            c.distance_to_gold.is_finite() && c.window_distance_to_gold.is_finite(),
            "{} distance not finite",
            c.name
        );
    }
    ensure!(report.controllers[2].distance_to_gold == 0.0, "gold row distance nonzero");

    let mut table = Vec::new();
    write_distance_table(&report, &mut table)?;
    let table = String::from_utf8(table)?;
    let lines: Vec<&str> = table.lines().collect();
    ensure!(lines[0] == "iteration,gold,global,random,lr,svr,mlp", "header `{}`", lines[0]);
    ensure!(lines.len() == 10, "{} table lines", lines.len());
    for (i, it) in (23..=30).enumerate() {
        ensure!(lines[i + 1].starts_with(&format!("{it},")), "row `{}`", lines[i + 1]);
    }
    let last = lines[9];
    ensure!(last.starts_with("distance,0,"), "last row `{last}`");
    Ok(format!("{} records ordered; {last}", data.len()))
}

struct Cli {
    bin: PathBuf,
}

impl Cli {
    fn run(&self, out: &Path, args: &[&str]) -> Result<String> {
        let o = Command::new(&self.bin)
            .args(args)
            .arg("--out")
            .arg(out)
            .env_remove("CONCERNDP_OUT_DIR")
            .output()?;
        ensure!(
            o.status.success(),
            "`{}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&o.stderr)
        );
        Ok(String::from_utf8(o.stdout)?)
    }
}

/// Every file under `dir` except run manifests, keyed by relative path.
fn snapshot(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut files = BTreeMap::new();
    for e in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = e?.path();
        let name = p.file_name().unwrap().to_string_lossy().to_string();
        if p.is_file() && !name.ends_with(".manifest.json") {
            files.insert(name, fs::read(&p)?);
        }
    }
    Ok(files)
}

fn cli_determinism() -> Result<String> {
    let cli = Cli {
        bin: PathBuf::from(env!("CARGO_BIN_EXE_concern-dp")),
    };
    let tmp = tempfile::tempdir()?;
    let data_dir = tmp.path().join("data");
    cli.run(&data_dir, &["gen-data", "--seed", "5", "--resources"])?;
    let data = data_dir.join("dataset.csv");
    let data = data.to_str().unwrap();
    let emb = data_dir.join("embeddings.txt");
    let topics = data_dir.join("topics.csv");
    let res = ["--embeddings", emb.to_str().unwrap(), "--topics", topics.to_str().unwrap()];

    let mut compared = 0;
    let mut outputs: [Option<RoundOutput>; 2] = [None, None];
    for (round, slot) in outputs.iter_mut().enumerate() {
        let dir = tmp.path().join(format!("run{round}"));
        let d = dir.to_str().unwrap();
        let mut stdout = vec![cli.run(&dir, &["gen-data", "--seed", "5", "--resources"])?];
        for m in ["lr", "svr", "mlp", "nb", "svm"] {
            let mut args = vec!["train", "--model", m, "--data", data, "--seed", "5"];
            args.extend(res);
            stdout.push(cli.run(&dir, &args)?);
        }
        let mut args = vec![
            "simulate",
            "--data",
            data,
            "--seed",
            "5",
            "--controllers",
            "global,random,gold,lr,svr,mlp",
            "--models-dir",
            d,
        ];
        args.extend(res);
        stdout.push(cli.run(&dir, &args)?);
        stdout.push(cli.run(&dir, &["smote", "--data", data, "--seed", "5"])?);
        stdout.push(cli.run(&dir, &["score", "--data", data])?);
        stdout.push(cli.run(&dir, &["score", "--scores", "5,5,1,1,1", "--labels", "yes,yes,no,no,no"])?);
        stdout.push(cli.run(&dir, &["verify-dp", "--seed", "5", "--samples", "200000"])?);
        *slot = Some((stdout, snapshot(&dir)?));
    }
    let [Some((out_a, files_a)), Some((out_b, files_b))] = outputs else {
        unreachable!()
    };
    ensure!(out_a == out_b, "stdout differs between runs");
    ensure!(
        files_a.keys().eq(files_b.keys()),
        "file sets differ: {:?} vs {:?}",
        files_a.keys(),
        files_b.keys()
    );
    for (name, bytes) in &files_a {
        ensure!(files_b[name] == *bytes, "{name} differs between runs");
        compared += 1;
    }
    ensure!(
        out_a.last().is_some_and(|s| s.starts_with("pass")),
        "verify-dp did not pass"
    );
    ensure!(out_a[9].contains("HiPC"), "score did not print HiPC");
    Ok(format!("{} commands, {compared} output files byte-identical", out_a.len()))
}
