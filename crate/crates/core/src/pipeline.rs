//! From dataset records to trained, saved models.
//!
//! A [`FeaturePipeline`] is fitted on the training users only: the n-gram
//! vocabulary comes from their statuses and the max-abs scaler from their
//! feature rows. After column scaling every row is rescaled to unit L2 norm;
//! without that, a user's few hundred active n-gram columns let Adam
//! memorize the training split outright. Word vectors and topic rows are
//! optional external inputs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::concern::{ConcernLabel, Trait, WeightVector};
use crate::error::{invalid, Result};
use crate::features::{assemble, EmbeddingTable, NgramVocabulary, TopicTable, NGRAM_DIM};
use crate::learners::{
    accuracy, evs, kfold_split, linreg_fit_multi, majority_accuracy, mlp_train, nb_fit, rmse,
    smote, svm_fit, svr_fit, train_test_split, Classifier, MaxAbsScaler, Matrix, SavedModel,
    SvmConfig, SvrConfig, TraitCombiner, TraitLinearModels, TrainConfig, DEFAULT_VAR_SMOOTHING,
};
use crate::simulation::{ScoreSource, SimData};
use crate::synth::UserRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lr,
    Svr,
    Mlp,
    Nb,
    Svm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Lr, ModelKind::Svr, ModelKind::Mlp, ModelKind::Nb, ModelKind::Svm];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Lr => "lr",
            ModelKind::Svr => "svr",
            ModelKind::Mlp => "mlp",
            ModelKind::Nb => "nb",
            ModelKind::Svm => "svm",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == name)
            .ok_or_else(|| invalid(format!("unknown model `{name}` (expected lr, svr, mlp, nb or svm)")))
    }

    /// Regression models predict the concern score; the others the label.
    pub fn is_regression(self) -> bool {
        matches!(self, ModelKind::Lr | ModelKind::Svr | ModelKind::Mlp)
    }
}

/// Optional precomputed inputs for the topic and embedding blocks.
#[derive(Debug, Clone, Copy, Default)]
pub struct Resources<'a> {
    pub embeddings: Option<&'a EmbeddingTable>,
    pub topics: Option<&'a TopicTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub vocab: NgramVocabulary,
    pub scaler: MaxAbsScaler,
}

fn raw_features(users: &[&UserRecord], vocab: &NgramVocabulary, res: Resources) -> Result<Matrix> {
    let mut x = Matrix::zeros(0, 0);
    for u in users {
        let topics = res.topics.and_then(|t| t.get(&u.id));
        let fv = assemble(&u.statuses, vocab, topics, res.embeddings)?;
        x.push_row(&fv.to_dense())?;
    }
    Ok(x)
}

impl FeaturePipeline {
    pub fn fit(users: &[&UserRecord], res: Resources) -> Result<Self> {
        let corpus: Vec<&str> = users.iter().flat_map(|u| u.statuses.iter().map(String::as_str)).collect();
        let vocab = NgramVocabulary::build(&corpus, NGRAM_DIM)?;
        let scaler = MaxAbsScaler::fit(&raw_features(users, &vocab, res)?);
        Ok(Self { vocab, scaler })
    }

    pub fn transform(&self, users: &[&UserRecord], res: Resources) -> Result<Matrix> {
        if users.is_empty() {
            return Ok(Matrix::zeros(0, self.scaler.dim()));
        }
        let mut x = self.scaler.transform(&raw_features(users, &self.vocab, res)?)?;
        for i in 0..x.rows() {
            normalize_row(x.row_mut(i));
        }
        Ok(x)
    }
}

fn normalize_row(row: &mut [f64]) {
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        row.iter_mut().for_each(|v| *v /= norm);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub train_fraction: f64,
    pub seed: u64,
    pub mlp: TrainConfig,
    pub svr: SvrConfig,
    pub svm: SvmConfig,
    pub var_smoothing: f64,
    pub smote_k: usize,
    pub cv_folds: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            mlp: TrainConfig::default(),
            svr: SvrConfig::default(),
            svm: SvmConfig::default(),
            var_smoothing: DEFAULT_VAR_SMOOTHING,
            smote_k: 5,
            cv_folds: 5,
        }
    }
}

impl TrainOptions {
    /// Options whose every random stream derives from `seed`.
    pub fn seeded(seed: u64) -> Self {
        let mut o = Self { seed, ..Self::default() };
        o.mlp.seed = seed;
        o.svr.seed = seed;
        o.svm.seed = seed;
        o
    }

    /// Applies one `key=value` override. Model-specific keys carry a prefix
    /// (`mlp.`, `svr.`, `svm.`).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| invalid(format!("bad value `{value}` for `{key}`")))
        }
        if let Some(k) = key.strip_prefix("mlp.") {
            return self.mlp.set(k, value);
        }
        match key {
            "split" | "train_fraction" => self.train_fraction = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "var_smoothing" => self.var_smoothing = num(key, value)?,
            "smote_k" => self.smote_k = num(key, value)?,
            "cv_folds" => self.cv_folds = num(key, value)?,
            "svr.epsilon" => self.svr.epsilon = num(key, value)?,
            "svr.lambda" => self.svr.lambda = num(key, value)?,
            "svr.epochs" => self.svr.epochs = num(key, value)?,
            "svr.learning_rate" => self.svr.learning_rate = num(key, value)?,
            "svr.seed" => self.svr.seed = num(key, value)?,
            "svm.lambda" => self.svm.lambda = num(key, value)?,
            "svm.epochs" => self.svm.epochs = num(key, value)?,
            "svm.seed" => self.svm.seed = num(key, value)?,
            other => return Err(invalid(format!("unknown option `{other}`"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub rmse: f64,
    pub evs: f64,
}

impl RegressionMetrics {
    pub fn compute(y: &[f64], pred: &[f64]) -> Result<Self> {
        Ok(Self {
            rmse: rmse(y, pred)?,
            evs: evs(y, pred)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub train: RegressionMetrics,
    pub test: RegressionMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    /// Accuracy of always predicting the most frequent label, on all users.
    pub majority_baseline: f64,
    /// Mean k-fold accuracy after oversampling the whole dataset.
    pub cv_accuracy: f64,
    pub cv_folds: usize,
    /// Class counts after oversampling, in label order (LoPC, MePC, HiPC).
    pub smote_counts: Vec<usize>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrainReport {
    Regression(RegressionReport),
    Classification(ClassificationReport),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitInfo {
    pub fn indices(&self, n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        train_test_split(n, self.train_fraction, self.seed)
    }
}

/// A fitted model plus everything needed to featurize new users the same
/// way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub kind: ModelKind,
    pub split: SplitInfo,
    pub pipeline: FeaturePipeline,
    pub model: SavedModel,
}

impl ModelBundle {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.model.input_dim() != self.pipeline.scaler.dim() {
            return Err(invalid(format!(
                "model expects {} features but the pipeline produces {}",
                self.model.input_dim(),
                self.pipeline.scaler.dim()
            )));
        }
        if self.kind.is_regression() != self.model.is_regressor() {
            return Err(invalid(format!("`{}` bundle holds a {} model", self.kind.as_str(), self.model.kind())));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bundle: ModelBundle = serde_json::from_str(&fs::read_to_string(path)?)?;
        bundle.validate()?;
        Ok(bundle)
    }

    /// Concern scores for regression bundles.
    pub fn predict_scores(&self, users: &[&UserRecord], res: Resources) -> Result<Vec<f64>> {
        let reg = self
            .model
            .as_regressor()
            .ok_or_else(|| invalid(format!("`{}` does not predict concern scores", self.kind.as_str())))?;
        Ok(reg.predict(&self.pipeline.transform(users, res)?))
    }

    pub fn predict_labels(&self, users: &[&UserRecord], res: Resources) -> Result<Vec<ConcernLabel>> {
        let clf = self
            .model
            .as_classifier()
            .ok_or_else(|| invalid(format!("`{}` does not predict labels", self.kind.as_str())))?;
        clf.predict(&self.pipeline.transform(users, res)?)
            .into_iter()
            .map(|i| ConcernLabel::from_index(i).ok_or_else(|| invalid(format!("class index {i}"))))
            .collect()
    }
}

fn fit_classifier(kind: ModelKind, x: &Matrix, labels: &[usize], opts: &TrainOptions) -> Result<SavedModel> {
    Ok(match kind {
        ModelKind::Nb => SavedModel::NaiveBayes(nb_fit(x, labels, opts.var_smoothing)?),
        ModelKind::Svm => SavedModel::Svm(svm_fit(x, labels, &opts.svm)?),
        other => return Err(invalid(format!("`{}` is not a classifier", other.as_str()))),
    })
}

fn fit_regressor(kind: ModelKind, x: &Matrix, users: &[&UserRecord], opts: &TrainOptions) -> Result<SavedModel> {
    let gold: Vec<f64> = users.iter().map(|u| u.gold_r.value()).collect();
    Ok(match kind {
        ModelKind::Lr => {
            // One least-squares model per trait score, combined like the
            // gold score so the output lives on the same scale.
            let traits: Vec<[f64; 5]> = users.iter().map(|u| u.traits.values()).collect();
            let targets: Vec<Vec<f64>> = (0..5).map(|t| traits.iter().map(|s| s[t]).collect()).collect();
            SavedModel::TraitLinear(TraitLinearModels {
                models: linreg_fit_multi(x, &targets)?,
                weights: WeightVector::default(),
                combiner: TraitCombiner::GoldLinear,
            })
        }
        ModelKind::Svr => SavedModel::Linear(svr_fit(x, &gold, &opts.svr)?),
        ModelKind::Mlp => SavedModel::Mlp(mlp_train(x, &gold, &opts.mlp)?),
        other => return Err(invalid(format!("`{}` is not a regressor", other.as_str()))),
    })
}

/// Mean accuracy over `folds` folds; each fold trains on the rest.
pub fn cv_accuracy(
    x: &Matrix,
    labels: &[usize],
    folds: usize,
    seed: u64,
    fit: impl Fn(&Matrix, &[usize]) -> Result<Box<dyn Classifier>>,
) -> Result<f64> {
    let parts = kfold_split(x.rows(), folds, seed)?;
    let mut total = 0.0;
    for (f, test) in parts.iter().enumerate() {
        let train: Vec<usize> = parts
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, p)| p.iter().copied())
            .collect();
        let y_train: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let y_test: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
        let model = fit(&x.select_rows(&train), &y_train)?;
        total += accuracy(&y_test, &model.predict(&x.select_rows(test)))?;
    }
    Ok(total / folds as f64)
}

fn boxed(kind: ModelKind, opts: TrainOptions) -> impl Fn(&Matrix, &[usize]) -> Result<Box<dyn Classifier>> {
    move |x, y| {
        Ok(match fit_classifier(kind, x, y, &opts)? {
            SavedModel::NaiveBayes(m) => Box::new(m) as Box<dyn Classifier>,
            SavedModel::Svm(m) => Box::new(m),
            _ => unreachable!("fit_classifier returns classifiers"),
        })
    }
}

/// Oversamples all users' features, then reports mean k-fold accuracy and
/// the balanced class counts. Synthetic points can land in a test fold next
/// to their own source rows, so the figure is optimistic.
pub fn smote_cv_accuracy(
    kind: ModelKind,
    users: &[UserRecord],
    opts: &TrainOptions,
    res: Resources,
) -> Result<(f64, Vec<usize>)> {
    let all: Vec<&UserRecord> = users.iter().collect();
    let pipeline = FeaturePipeline::fit(&all, res)?;
    let x = pipeline.transform(&all, res)?;
    let labels: Vec<usize> = users.iter().map(|u| u.concern_label.index()).collect();
    let balanced = smote(&x, &labels, opts.smote_k, opts.seed)?;
    let counts = ConcernLabel::ALL
        .iter()
        .map(|l| balanced.labels.iter().filter(|&&c| c == l.index()).count())
        .collect();
    let acc = cv_accuracy(&balanced.x, &balanced.labels, opts.cv_folds, opts.seed, boxed(kind, *opts))?;
    Ok((acc, counts))
}

pub fn train_model(
    users: &[UserRecord],
    kind: ModelKind,
    opts: &TrainOptions,
    res: Resources,
) -> Result<(ModelBundle, TrainReport)> {
    let split = SplitInfo {
        train_fraction: opts.train_fraction,
        seed: opts.seed,
    };
    let (train_idx, test_idx) = split.indices(users.len())?;
    let train: Vec<&UserRecord> = train_idx.iter().map(|&i| &users[i]).collect();
    let test: Vec<&UserRecord> = test_idx.iter().map(|&i| &users[i]).collect();
    let pipeline = FeaturePipeline::fit(&train, res)?;
    let x_train = pipeline.transform(&train, res)?;
    let x_test = pipeline.transform(&test, res)?;

    let (model, report) = if kind.is_regression() {
        let model = fit_regressor(kind, &x_train, &train, opts)?;
        let reg = model.as_regressor().expect("regressor");
        let gold = |us: &[&UserRecord]| us.iter().map(|u| u.gold_r.value()).collect::<Vec<_>>();
        let report = RegressionReport {
            train: RegressionMetrics::compute(&gold(&train), &reg.predict(&x_train))?,
            test: RegressionMetrics::compute(&gold(&test), &reg.predict(&x_test))?,
        };
        (model, TrainReport::Regression(report))
    } else {
        let label = |us: &[&UserRecord]| us.iter().map(|u| u.concern_label.index()).collect::<Vec<_>>();
        let (y_train, y_test) = (label(&train), label(&test));
        let balanced = smote(&x_train, &y_train, opts.smote_k, opts.seed)?;
        let model = fit_classifier(kind, &balanced.x, &balanced.labels, opts)?;
        let clf = model.as_classifier().expect("classifier");
        let all_labels: Vec<usize> = users.iter().map(|u| u.concern_label.index()).collect();
        let (cv_accuracy, smote_counts) = smote_cv_accuracy(kind, users, opts, res)?;
        let report = ClassificationReport {
            majority_baseline: majority_accuracy(&all_labels)?,
            cv_accuracy,
            cv_folds: opts.cv_folds,
            smote_counts,
            train_accuracy: accuracy(&y_train, &clf.predict(&x_train))?,
            test_accuracy: accuracy(&y_test, &clf.predict(&x_test))?,
        };
        (model, TrainReport::Classification(report))
    };

    let bundle = ModelBundle {
        kind,
        split,
        pipeline,
        model,
    };
    bundle.validate()?;
    Ok((bundle, report))
}

/// Simulation records: the held-out users of `split`, featurized by a
/// pipeline fitted on the training side. Only gold scores are attached.
pub fn simulation_data<'u>(
    users: &'u [UserRecord],
    split: SplitInfo,
    res: Resources,
) -> Result<(Vec<&'u UserRecord>, SimData)> {
    let (train_idx, test_idx) = split.indices(users.len())?;
    let train: Vec<&UserRecord> = train_idx.iter().map(|&i| &users[i]).collect();
    let test: Vec<&UserRecord> = test_idx.iter().map(|&i| &users[i]).collect();
    let x = FeaturePipeline::fit(&train, res)?.transform(&test, res)?;
    let data = SimData::new(
        test.iter().map(|u| u.id.clone()).collect(),
        &x,
        test.iter().map(|u| u.gold_r.value()).collect(),
        test.iter().map(|u| u.labels.get(Trait::Extraversion)).collect(),
    )?;
    Ok((test, data))
}

/// Attaches a regression bundle's predicted scores for the simulated users.
/// The bundle must have been trained on the same split.
pub fn attach_scores(
    data: SimData,
    source: ScoreSource,
    bundle: &ModelBundle,
    split: SplitInfo,
    users: &[&UserRecord],
    res: Resources,
) -> Result<SimData> {
    if bundle.split != split {
        return Err(invalid(format!(
            "`{}` model was trained on split {:?}, simulation uses {:?}",
            bundle.kind.as_str(),
            bundle.split,
            split
        )));
    }
    let scores = bundle.predict_scores(users, res)?;
    data.with_scores(source, scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_users, GenSpec};

    fn users() -> Vec<UserRecord> {
        gen_users(&GenSpec {
            n_users: 40,
            total_statuses: 400,
            label_counts: [4, 30, 6],
            seed: 2,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn kinds_parse() {
        for k in ModelKind::ALL {
            assert_eq!(ModelKind::parse(k.as_str()).unwrap(), k);
        }
        assert!(ModelKind::parse("forest").is_err());
    }

    #[test]
    fn pipeline_widths() {
        let us = users();
        let refs: Vec<&UserRecord> = us.iter().collect();
        let p = FeaturePipeline::fit(&refs[..30], Resources::default()).unwrap();
        let x = p.transform(&refs[30..], Resources::default()).unwrap();
        assert_eq!((x.rows(), x.cols()), (10, crate::features::FEATURE_DIM));
        for row in x.iter_rows() {
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lr_overfits_wide_training_split() {
        let us = users();
        let (bundle, report) = train_model(&us, ModelKind::Lr, &TrainOptions::seeded(1), Resources::default()).unwrap();
        let TrainReport::Regression(r) = report else { panic!() };
        assert!(r.train.rmse < 1e-6, "{r:?}");
        assert!((r.train.evs - 1.0).abs() < 1e-6);
        assert_eq!(bundle.kind, ModelKind::Lr);
    }

    #[test]
    fn bundle_round_trip() {
        let us = users();
        let (bundle, _) = train_model(&us, ModelKind::Nb, &TrainOptions::seeded(3), Resources::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nb.json");
        bundle.save(&path).unwrap();
        let back = ModelBundle::load(&path).unwrap();
        assert_eq!(back, bundle);
        let refs: Vec<&UserRecord> = us.iter().collect();
        assert_eq!(back.predict_labels(&refs, Resources::default()).unwrap().len(), 40);
        assert!(back.predict_scores(&refs, Resources::default()).is_err());
    }

    #[test]
    fn options_overrides() {
        let mut o = TrainOptions::seeded(4);
        o.set("mlp.hidden_units", "7").unwrap();
        o.set("svm.lambda", "0.5").unwrap();
        o.set("split", "0.7").unwrap();
        assert_eq!((o.mlp.hidden_units, o.svm.lambda, o.train_fraction), (7, 0.5, 0.7));
        assert!(o.set("bogus", "1").is_err());
    }

    #[test]
    fn full_split_rejected() {
        let opts = TrainOptions {
            train_fraction: 1.0,
            ..TrainOptions::seeded(0)
        };
        assert!(train_model(&users(), ModelKind::Lr, &opts, Resources::default()).is_err());
    }
}
