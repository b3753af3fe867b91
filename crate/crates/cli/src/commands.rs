use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use concern_dp::concern::{
    derive_label, gold_score, ConcernLabel, ScoreBounds, TraitLabels, TraitScores, WeightVector,
};
use concern_dp::features::{EmbeddingTable, TopicTable, EMBED_DIM};
use concern_dp::learners::smote as oversample;
use concern_dp::mechanisms::{
    counting_query, laplace_mechanism, verify_dp_ratio, DatabaseView, NoiseSpec, Row, VerifyParams,
};
use concern_dp::pipeline::{
    attach_scores, simulation_data, train_model, FeaturePipeline, ModelBundle, ModelKind, Resources, SplitInfo,
    TrainOptions,
};
use concern_dp::simulation::{
    compare_controllers, write_distance_table, write_traces, Controller, ScoreSource, SimConfig, Task,
};
use concern_dp::synth::{
    gen_embeddings, gen_topics, gen_users, label_histogram, load_dataset, save_dataset, GenSpec, Lexicon,
    UserRecord,
};
use concern_dp::Rng;

use crate::settings::{out_dir, Run, Settings};
use crate::{
    Common, GenDataArgs, MechanismArg, ModelArg, ResourceArgs, ScoreArgs, SimulateArgs, SmoteArgs, TaskArg,
    TrainArgs, VerifyDpArgs,
};

fn start(common: &Common, mut settings: Settings, command: &str) -> Result<(Settings, u64, Run)> {
    settings.flag("seed", common.seed);
    let seed = settings.take_parsed("seed", 0u64)?;
    let run = Run::start(command, seed, &out_dir(common.out.clone()))?;
    Ok((settings, seed, run))
}

fn settings_for(common: &Common) -> Result<Settings> {
    Settings::load(common.config.as_deref())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_users(path: &Path, run: &mut Run) -> Result<Vec<UserRecord>> {
    run.input(path);
    let users = load_dataset(path).with_context(|| format!("reading {}", path.display()))?;
    if users.is_empty() {
        bail!("{} holds no users", path.display());
    }
    Ok(users)
}

struct Loaded {
    embeddings: Option<EmbeddingTable>,
    topics: Option<TopicTable>,
}

impl Loaded {
    fn new(args: &ResourceArgs, run: &mut Run) -> Result<Self> {
        let embeddings = match &args.embeddings {
            Some(p) => {
                run.input(p);
                Some(EmbeddingTable::load(p).with_context(|| format!("reading {}", p.display()))?)
            }
            None => None,
        };
        let topics = match &args.topics {
            Some(p) => {
                run.input(p);
                Some(TopicTable::load(p).with_context(|| format!("reading {}", p.display()))?)
            }
            None => None,
        };
        Ok(Self { embeddings, topics })
    }

    fn resources(&self) -> Resources<'_> {
        Resources {
            embeddings: self.embeddings.as_ref(),
            topics: self.topics.as_ref(),
        }
    }
}

fn parse_counts(text: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let [a, b, c] = parts.as_slice() else {
        bail!("counts must be three comma-separated integers (LoPC,MePC,HiPC), got `{text}`");
    };
    let p = |s: &str| s.parse::<usize>().with_context(|| format!("bad count `{s}`"));
    Ok([p(a)?, p(b)?, p(c)?])
}

fn histogram_map(h: &[usize]) -> BTreeMap<String, usize> {
    ConcernLabel::ALL.iter().map(|l| (l.to_string(), h[l.index()])).collect()
}

pub fn gen_data(args: GenDataArgs) -> Result<()> {
    let mut s = settings_for(&args.common)?;
    s.flag("users", args.users);
    s.flag("statuses", args.statuses);
    s.flag("counts", args.counts.clone());
    let (mut s, seed, mut run) = start(&args.common, s, "gen-data")?;
    let defaults = GenSpec::default();
    let spec = GenSpec {
        n_users: s.take_parsed("users", defaults.n_users)?,
        total_statuses: s.take_parsed("statuses", defaults.total_statuses)?,
        label_counts: match s.take("counts") {
            Some(c) => parse_counts(&c)?,
            None => defaults.label_counts,
        },
        seed,
        bounds: defaults.bounds,
        network: !args.no_network && s.take_parsed("network", true)?,
    };
    let resources = args.resources || s.take_parsed("resources", false)?;
    s.finish()?;

    let users = gen_users(&spec)?;
    save_dataset(&users, run.output("dataset.csv"))?;
    if resources {
        let lexicon = Lexicon::default();
        let emb = gen_embeddings(&lexicon, EMBED_DIM, seed)?;
        emb.write(BufWriter::new(File::create(run.output("embeddings.txt"))?))?;
        let topics = gen_topics(&users, &lexicon, seed)?;
        let order: Vec<&str> = users.iter().map(|u| u.id.as_str()).collect();
        topics.write(&order, BufWriter::new(File::create(run.output("topics.csv"))?))?;
    }
    let h = label_histogram(&users);
    println!(
        "{} users, {} statuses, LoPC/MePC/HiPC = {}/{}/{}",
        users.len(),
        users.iter().map(|u| u.statuses.len()).sum::<usize>(),
        h[0],
        h[1],
        h[2]
    );
    run.finish("dataset", spec)
}

fn model_kind(m: ModelArg) -> ModelKind {
    match m {
        ModelArg::Lr => ModelKind::Lr,
        ModelArg::Svr => ModelKind::Svr,
        ModelArg::Mlp => ModelKind::Mlp,
        ModelArg::Nb => ModelKind::Nb,
        ModelArg::Svm => ModelKind::Svm,
    }
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut s = settings_for(&args.common)?;
    s.flag("split", args.split);
    let (mut s, seed, mut run) = start(&args.common, s, "train")?;
    let mut opts = TrainOptions::seeded(seed);
    let keys: Vec<(String, String)> = s.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    for (k, v) in keys {
        opts.set(&k, &v)?;
        s.take(&k);
    }
    s.finish()?;

    let users = read_users(&args.data, &mut run)?;
    let loaded = Loaded::new(&args.resources, &mut run)?;
    let kind = model_kind(args.model);
    let (bundle, report) = train_model(&users, kind, &opts, loaded.resources())?;
    bundle.save(&run.output(&format!("{}.json", kind.as_str())))?;
    write_json(&run.output(&format!("{}_metrics.json", kind.as_str())), &report)?;
    println!("{}", serde_json::to_string(&report)?);
    run.finish(kind.as_str(), opts)
}

#[derive(Serialize)]
struct SimSnapshot {
    controllers: Vec<String>,
    split: SplitInfo,
    sim: SimConfig,
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let mut s = settings_for(&args.common)?;
    s.flag("iters", args.iters);
    s.flag("eps", args.eps);
    s.flag("split", args.split);
    s.flag("folds", args.folds);
    s.flag(
        "task",
        args.task.map(|t| match t {
            TaskArg::Cls => "cls",
            TaskArg::Reg => "reg",
        }),
    );
    let (mut s, seed, mut run) = start(&args.common, s, "simulate")?;
    let defaults = SimConfig::default();
    let task = match s.take("task").as_deref() {
        None | Some("cls") => Task::Classification,
        Some("reg") => Task::Regression,
        Some(other) => bail!("unknown task `{other}` (expected cls or reg)"),
    };
    let cfg = SimConfig {
        eps_per_query: s.take_parsed("eps", defaults.eps_per_query)?,
        iterations: s.take_parsed("iters", defaults.iterations)?,
        task,
        folds: s.take_parsed("folds", defaults.folds)?,
        seed,
    };
    let split = SplitInfo {
        train_fraction: s.take_parsed("split", 0.8)?,
        seed,
    };
    let names = s.take("controllers").unwrap_or(args.controllers.clone());
    s.finish()?;
    cfg.validate()?;

    let controllers = names
        .split(',')
        .map(|n| Controller::parse(n.trim(), seed))
        .collect::<concern_dp::Result<Vec<_>>>()?;
    if controllers.is_empty() {
        bail!("no controllers given");
    }

    let users = read_users(&args.data, &mut run)?;
    let loaded = Loaded::new(&args.resources, &mut run)?;
    let res = loaded.resources();
    let (test_users, mut data) = simulation_data(&users, split, res)?;

    let models_dir = args.models_dir.clone().unwrap_or_else(|| out_dir(args.common.out.clone()));
    let mut attached = Vec::new();
    for c in &controllers {
        if let Controller::FromScores { source, .. } = *c {
            if source == ScoreSource::Gold || attached.contains(&source) {
                continue;
            }
            let path = models_dir.join(format!("{}.json", source.as_str()));
            if !path.exists() {
                bail!("missing model file {}", path.display());
            }
            run.input(&path);
            let bundle = ModelBundle::load(&path).with_context(|| format!("loading {}", path.display()))?;
            data = attach_scores(data, source, &bundle, split, &test_users, res)?;
            attached.push(source);
        }
    }

    let report = compare_controllers(&data, &controllers, &cfg)?;
    write_traces(
        report.controllers.iter().map(|c| &c.trace),
        BufWriter::new(File::create(run.output("trace.csv"))?),
    )?;
    write_json(&run.output("report.json"), &report)?;
    write_distance_table(&report, BufWriter::new(File::create(run.output("distances.csv"))?))?;
    for c in &report.controllers {
        println!(
            "{:<7} iterations {:>2}  distance to gold {:.3} (window {:.3})",
            c.name,
            c.trace.rows.len(),
            c.distance_to_gold,
            c.window_distance_to_gold
        );
    }
    run.finish(
        "simulate",
        SimSnapshot {
            controllers: controllers.iter().map(|c| c.name().to_string()).collect(),
            split,
            sim: cfg,
        },
    )
}

#[derive(Serialize)]
struct SmoteCounts {
    k: usize,
    before: BTreeMap<String, usize>,
    after: BTreeMap<String, usize>,
}

pub fn smote(args: SmoteArgs) -> Result<()> {
    let mut s = settings_for(&args.common)?;
    s.flag("k", args.k);
    let (mut s, seed, mut run) = start(&args.common, s, "smote")?;
    let k = s.take_parsed("k", 5usize)?;
    s.finish()?;

    let users = read_users(&args.data, &mut run)?;
    let loaded = Loaded::new(&args.resources, &mut run)?;
    let refs: Vec<&UserRecord> = users.iter().collect();
    let pipeline = FeaturePipeline::fit(&refs, loaded.resources())?;
    let x = pipeline.transform(&refs, loaded.resources())?;
    let labels: Vec<usize> = users.iter().map(|u| u.concern_label.index()).collect();
    let result = oversample(&x, &labels, k, seed)?;

    let mut after = [0usize; 3];
    for &l in &result.labels {
        after[l] += 1;
    }
    let counts = SmoteCounts {
        k,
        before: histogram_map(&label_histogram(&users)),
        after: histogram_map(&after),
    };
    write_json(&run.output("smote_counts.json"), &counts)?;

    let mut w = csv_out(run.output("smote_origins.csv"))?;
    w.write_record(["row", "label", "base_user", "neighbor_user", "gap"])?;
    for o in &result.origins {
        w.write_record([
            o.row.to_string(),
            ConcernLabel::from_index(result.labels[o.row]).map_or("?", ConcernLabel::as_str).to_string(),
            users[o.base].id.clone(),
            users[o.neighbor].id.clone(),
            o.gap.to_string(),
        ])?;
    }
    w.flush()?;
    println!(
        "LoPC/MePC/HiPC {}/{}/{} -> {}/{}/{}",
        counts.before["LoPC"], counts.before["MePC"], counts.before["HiPC"], after[0], after[1], after[2]
    );
    run.finish("smote", serde_json::json!({ "k": k, "seed": seed }))
}

fn csv_out(path: std::path::PathBuf) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))
}

fn parse_scores(text: &str) -> Result<TraitScores> {
    let v: Vec<f64> = text
        .split(',')
        .map(|x| x.trim().parse::<f64>().with_context(|| format!("bad score `{x}`")))
        .collect::<Result<_>>()?;
    let arr: [f64; 5] = v
        .try_into()
        .map_err(|v: Vec<f64>| anyhow::anyhow!("need 5 scores (NEU,OPN,CON,AGR,EXT), got {}", v.len()))?;
    Ok(TraitScores::new(arr, ScoreBounds::default())?)
}

fn parse_labels(text: &str) -> Result<TraitLabels> {
    let v: Vec<bool> = text
        .split(',')
        .map(|x| match x.trim() {
            "yes" | "y" | "1" => Ok(true),
            "no" | "n" | "0" => Ok(false),
            other => bail!("bad label `{other}` (expected yes or no)"),
        })
        .collect::<Result<_>>()?;
    let arr: [bool; 5] = v
        .try_into()
        .map_err(|v: Vec<bool>| anyhow::anyhow!("need 5 labels (NEU,OPN,CON,AGR,EXT), got {}", v.len()))?;
    Ok(TraitLabels(arr))
}

#[derive(Serialize)]
struct InlineScore {
    gold_r: Option<f64>,
    concern_label: Option<ConcernLabel>,
}

pub fn score(args: ScoreArgs) -> Result<()> {
    let s = settings_for(&args.common)?;
    let (s, seed, mut run) = start(&args.common, s, "score")?;
    s.finish()?;
    let v = WeightVector::default();

    if let Some(path) = &args.data {
        let users = read_users(path, &mut run)?;
        let mut w = csv_out(run.output("scores.csv"))?;
        w.write_record(["user_id", "gold_r", "concern_label"])?;
        let mut h = [0usize; 3];
        for u in &users {
            let r = gold_score(&u.traits, &v).value();
            let label = derive_label(&u.labels);
            h[label.index()] += 1;
            w.write_record([u.id.clone(), r.to_string(), label.to_string()])?;
        }
        w.flush()?;
        println!("LoPC/MePC/HiPC = {}/{}/{}", h[0], h[1], h[2]);
        return run.finish("score", serde_json::json!({ "data": path, "seed": seed }));
    }

    if args.scores.is_none() && args.labels.is_none() {
        bail!("give --scores, --labels or --data");
    }
    let out = InlineScore {
        gold_r: args.scores.as_deref().map(parse_scores).transpose()?.map(|t| gold_score(&t, &v).value()),
        concern_label: args.labels.as_deref().map(parse_labels).transpose()?.map(|l| derive_label(&l)),
    };
    if let Some(r) = out.gold_r {
        println!("gold_r {r}");
    }
    if let Some(l) = out.concern_label {
        println!("concern_label {l}");
    }
    write_json(&run.output("score.json"), &out)?;
    run.finish(
        "score",
        serde_json::json!({ "scores": args.scores, "labels": args.labels, "seed": seed }),
    )
}

/// Two adjacent 100-row databases of 0/1 payloads differing in row 0.
fn adjacent_databases() -> Result<(DatabaseView, DatabaseView)> {
    let rows = (0..100).map(|i| Row::new(format!("r{i}"), vec![(i % 2) as f64])).collect();
    let d1 = DatabaseView::new(rows)?;
    let d2 = d1.with_row(0, Row::new("r0", vec![1.0]))?;
    Ok((d1, d2))
}

pub fn verify_dp(args: VerifyDpArgs) -> Result<()> {
    let mut s = settings_for(&args.common)?;
    s.flag("epsilon", args.epsilon);
    s.flag("delta", args.delta);
    s.flag("samples", args.samples);
    s.flag("bins", args.bins);
    let (mut s, seed, mut run) = start(&args.common, s, "verify-dp")?;
    let d = VerifyParams::default();
    let params = VerifyParams {
        epsilon: s.take_parsed("epsilon", d.epsilon)?,
        delta: s.take_parsed("delta", d.delta)?,
        bins: s.take_parsed("bins", d.bins)?,
        samples: s.take_parsed("samples", d.samples)?,
        seed,
        z: s.take_parsed("z", d.z)?,
    };
    s.finish()?;

    let (d1, d2) = adjacent_databases()?;
    let is_one = |p: &[f64]| p[0] > 0.5;
    let verdict = match args.mechanism {
        MechanismArg::Laplace => {
            let spec = NoiseSpec::new(params.epsilon, 1.0)?;
            let mech = |db: &DatabaseView, rng: &mut Rng| laplace_mechanism(counting_query(db, is_one), &spec, rng);
            verify_dp_ratio(mech, &d1, &d2, &params)?
        }
        MechanismArg::Noiseless => {
            let mech = |db: &DatabaseView, _: &mut Rng| Ok(counting_query(db, is_one));
            verify_dp_ratio(mech, &d1, &d2, &params)?
        }
    };
    write_json(&run.output("verdict.json"), &verdict)?;
    println!(
        "{}: {} of {} bins outside e^{} = {:.4} (raw max ratio {:.4})",
        if verdict.pass { "pass" } else { "fail" },
        verdict.bins.iter().filter(|b| !b.pass).count(),
        verdict.bins.len(),
        params.epsilon,
        verdict.threshold,
        verdict.max_ratio
    );
    let mechanism = match args.mechanism {
        MechanismArg::Laplace => "laplace",
        MechanismArg::Noiseless => "noiseless",
    };
    run.finish("verify_dp", serde_json::json!({ "mechanism": mechanism, "params": params }))
}
