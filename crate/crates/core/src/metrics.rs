//! Evaluation: per-class F1, functional accuracy, confusion proportions,
//! embedding similarity distributions, max-pooled turn scores and seed spread.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, GroundTruth, SentenceRef, TurnRef};
use crate::embed::EmbeddingProvider;
use crate::linalg::{dot, Matrix};
use crate::model::{LabelScores, SentenceModel, TurnModel};
use crate::{seeds, Error, Result, Scalar, SectionLabel};

/// Which sentences count toward the four-class accuracy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyScope {
    /// Sentences whose gold label is functional.
    #[default]
    GoldFunctional,
    /// Sentences whose gold or predicted label is functional.
    EitherFunctional,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold count.
    pub support: usize,
}

impl ClassScores {
    /// One-vs-rest scores from counts; empty denominators give 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        Self {
            precision,
            recall,
            f1,
            support: tp + fn_,
        }
    }
}

/// Rows are predicted labels, columns gold labels.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; SectionLabel::COUNT]; SectionLabel::COUNT],
    /// Column-normalized counts; `None` for gold labels with no sentences.
    pub proportions: [[Option<f64>; SectionLabel::COUNT]; SectionLabel::COUNT],
}

impl ConfusionMatrix {
    pub fn from_pairs(pairs: &[(SectionLabel, SectionLabel)]) -> Self {
        let mut counts = [[0usize; SectionLabel::COUNT]; SectionLabel::COUNT];
        for &(p, g) in pairs {
            counts[p.index()][g.index()] += 1;
        }
        let mut proportions = [[None; SectionLabel::COUNT]; SectionLabel::COUNT];
        for g in 0..SectionLabel::COUNT {
            let total: usize = (0..SectionLabel::COUNT).map(|p| counts[p][g]).sum();
            if total > 0 {
                for p in 0..SectionLabel::COUNT {
                    proportions[p][g] = Some(counts[p][g] as f64 / total as f64);
                }
            }
        }
        Self { counts, proportions }
    }

    pub fn get(&self, predicted: SectionLabel, gold: SectionLabel) -> Option<f64> {
        self.proportions[predicted.index()][gold.index()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: BTreeMap<SectionLabel, ClassScores>,
    pub accuracy: f64,
    pub accuracy_scope: AccuracyScope,
    pub confusion: ConfusionMatrix,
    pub sentences: usize,
}

impl EvalReport {
    pub fn f1(&self, l: SectionLabel) -> f64 {
        self.per_class.get(&l).map_or(0.0, |s| s.f1)
    }
}

/// Scores `(predicted, gold)` pairs.
pub fn eval_pairs(pairs: &[(SectionLabel, SectionLabel)], scope: AccuracyScope) -> EvalReport {
    let mut per_class = BTreeMap::new();
    for l in SectionLabel::ALL {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for &(p, g) in pairs {
            match (p == l, g == l) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        per_class.insert(l, ClassScores::from_counts(tp, fp, fn_));
    }
    let in_scope = |p: SectionLabel, g: SectionLabel| match scope {
        AccuracyScope::GoldFunctional => g.is_functional(),
        AccuracyScope::EitherFunctional => g.is_functional() || p.is_functional(),
    };
    let considered = pairs.iter().filter(|&&(p, g)| in_scope(p, g)).count();
    let correct = pairs.iter().filter(|&&(p, g)| in_scope(p, g) && p == g).count();
    EvalReport {
        per_class,
        accuracy: if considered == 0 { 0.0 } else { correct as f64 / considered as f64 },
        accuracy_scope: scope,
        confusion: ConfusionMatrix::from_pairs(pairs),
        sentences: pairs.len(),
    }
}

fn paired(pred: &HashMap<SentenceRef, SectionLabel>, gold: &GroundTruth) -> Result<Vec<(SectionLabel, SectionLabel)>> {
    let mut pairs = Vec::with_capacity(gold.len());
    let mut missing = Vec::new();
    for (r, g) in gold.iter() {
        match pred.get(r) {
            Some(&p) => pairs.push((p, g)),
            None => missing.push(r.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Coverage {
            count: missing.len(),
            first: missing.into_iter().take(5).collect::<Vec<_>>().join(", "),
        });
    }
    Ok(pairs)
}

/// Evaluates predictions against every gold sentence.
pub fn sentence_eval(
    pred: &HashMap<SentenceRef, SectionLabel>,
    gold: &GroundTruth,
    scope: AccuracyScope,
) -> Result<EvalReport> {
    Ok(eval_pairs(&paired(pred, gold)?, scope))
}

pub fn confusion_proportions(pred: &HashMap<SentenceRef, SectionLabel>, gold: &GroundTruth) -> Result<ConfusionMatrix> {
    Ok(ConfusionMatrix::from_pairs(&paired(pred, gold)?))
}

/// Fixed-width histogram over `[lo, hi]`; the last bin is closed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Self {
            lo,
            hi,
            counts: vec![0; bins.max(1)],
        }
    }

    pub fn add(&mut self, v: f64) {
        let bins = self.counts.len();
        let t = ((v - self.lo) / (self.hi - self.lo) * bins as f64).floor();
        let i = if t.is_nan() { 0 } else { (t.max(0.0) as usize).min(bins - 1) };
        self.counts[i] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + w * i as f64, self.lo + w * (i + 1) as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_left,bin_right,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let (l, r) = self.bin_edges(i);
            let _ = writeln!(s, "{l:.4},{r:.4},{c}");
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityConfig {
    pub per_class: usize,
    pub pairs: usize,
    pub bins: usize,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            per_class: 1000,
            pairs: 100_000,
            bins: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSimilarity {
    pub class: SectionLabel,
    /// Members sampled for this class.
    pub n: usize,
    pub self_hist: Histogram,
    pub other_hist: Histogram,
    pub self_median: f64,
    pub other_median: Option<f64>,
}

impl ClassSimilarity {
    pub fn separation(&self) -> Option<f64> {
        self.other_median.map(|o| self.self_median - o)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub classes: Vec<ClassSimilarity>,
}

impl SimilarityReport {
    pub fn class(&self, l: SectionLabel) -> Option<&ClassSimilarity> {
        self.classes.iter().find(|c| c.class == l)
    }
}

fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    v.sort_by(f64::total_cmp);
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Cosine similarity distributions of same-class and cross-class pairs of
/// embeddings grouped by predicted class.
pub fn cosine_similarity_report<T: Scalar>(
    embeddings: &Matrix<T>,
    predicted: &[SectionLabel],
    config: &SimilarityConfig,
    seed: u64,
) -> Result<SimilarityReport> {
    if embeddings.rows() != predicted.len() {
        return Err(Error::Precondition("embeddings and predictions differ in length".into()));
    }
    let norms: Vec<f64> = embeddings.row_iter().map(|r| dot(r, r).as_f64().sqrt()).collect();
    let cosine = |i: usize, j: usize| -> f64 {
        let d = norms[i] * norms[j];
        if d == 0.0 {
            if norms[i] == norms[j] {
                1.0
            } else {
                0.0
            }
        } else {
            (dot(embeddings.row(i), embeddings.row(j)).as_f64() / d).clamp(-1.0, 1.0)
        }
    };
    let mut sampled: BTreeMap<SectionLabel, Vec<usize>> = BTreeMap::new();
    for l in SectionLabel::ALL {
        let members: Vec<usize> = (0..predicted.len()).filter(|&i| predicted[i] == l).collect();
        if members.len() < 2 {
            if !members.is_empty() {
                tracing::warn!(class = %l, "fewer than two members; skipped in similarity report");
            }
            continue;
        }
        let mut rng = seeds::rng(seeds::derive(seed, "similarity-sample", l.index() as u64));
        let pick = rand::seq::index::sample(&mut rng, members.len(), config.per_class.min(members.len()));
        let mut idx: Vec<usize> = pick.into_iter().map(|i| members[i]).collect();
        idx.sort_unstable();
        sampled.insert(l, idx);
    }
    let mut classes = Vec::new();
    for (&l, own) in &sampled {
        let others: Vec<usize> = sampled.iter().filter(|(&k, _)| k != l).flat_map(|(_, v)| v.iter().copied()).collect();
        let mut rng = seeds::rng(seeds::derive(seed, "similarity-pairs", l.index() as u64));
        let mut self_hist = Histogram::new(-1.0, 1.0, config.bins);
        let mut other_hist = Histogram::new(-1.0, 1.0, config.bins);
        let mut self_vals = Vec::with_capacity(config.pairs);
        for _ in 0..config.pairs {
            let a = rng.random_range(0..own.len());
            let mut b = rng.random_range(0..own.len() - 1);
            if b >= a {
                b += 1;
            }
            let c = cosine(own[a], own[b]);
            self_hist.add(c);
            self_vals.push(c);
        }
        let mut other_vals = Vec::new();
        if !others.is_empty() {
            other_vals.reserve(config.pairs);
            for _ in 0..config.pairs {
                let a = own[rng.random_range(0..own.len())];
                let b = others[rng.random_range(0..others.len())];
                let c = cosine(a, b);
                other_hist.add(c);
                other_vals.push(c);
            }
        }
        classes.push(ClassSimilarity {
            class: l,
            n: own.len(),
            self_hist,
            other_hist,
            self_median: if self_vals.is_empty() { f64::NAN } else { median(&mut self_vals) },
            other_median: if other_vals.is_empty() { None } else { Some(median(&mut other_vals)) },
        });
    }
    Ok(SimilarityReport { classes })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnEvalReport {
    pub per_class: BTreeMap<SectionLabel, ClassScores>,
    /// Mean over (turn, functional class) of predicted membership matching gold.
    pub binary_accuracy: f64,
    pub turns: usize,
}

impl TurnEvalReport {
    pub fn f1(&self, l: SectionLabel) -> f64 {
        self.per_class.get(&l).map_or(0.0, |s| s.f1)
    }
}

/// Scores predicted against gold turn label sets.
pub fn turn_set_eval(pairs: &[(BTreeSet<SectionLabel>, BTreeSet<SectionLabel>)]) -> TurnEvalReport {
    let mut per_class = BTreeMap::new();
    for l in SectionLabel::ALL {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (p, g) in pairs {
            match (p.contains(&l), g.contains(&l)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        per_class.insert(l, ClassScores::from_counts(tp, fp, fn_));
    }
    let mut agree = 0;
    for (p, g) in pairs {
        for l in SectionLabel::FUNCTIONAL {
            agree += usize::from(p.contains(&l) == g.contains(&l));
        }
    }
    let decisions = pairs.len() * SectionLabel::FUNCTIONAL.len();
    TurnEvalReport {
        per_class,
        binary_accuracy: if decisions == 0 { 0.0 } else { agree as f64 / decisions as f64 },
        turns: pairs.len(),
    }
}

/// Classes whose maximum sentence probability exceeds 0.5.
pub fn maxpool_labels<T: Scalar>(sentence_probs: &[LabelScores<T>]) -> BTreeSet<SectionLabel> {
    let half = T::of(0.5);
    SectionLabel::ALL
        .into_iter()
        .filter(|&l| sentence_probs.iter().any(|p| p[l] > half))
        .collect()
}

fn gold_turns(corpus: &Corpus, gold: &GroundTruth) -> Vec<(TurnRef, BTreeSet<SectionLabel>)> {
    corpus
        .professional_turns()
        .map(|(r, _)| {
            let g = gold.turn_labels(corpus, &r);
            (r, g)
        })
        .filter(|(_, g)| !g.is_empty())
        .collect()
}

/// Turn-level scores of a sentence model by max pooling its sentence
/// probabilities over each professional turn.
pub fn turn_eval_maxpool<T: Scalar>(
    model: &SentenceModel<T>,
    corpus: &Corpus,
    provider: &EmbeddingProvider,
    gold: &GroundTruth,
) -> Result<TurnEvalReport> {
    let mut pairs = Vec::new();
    for (r, g) in gold_turns(corpus, gold) {
        let turn = corpus.turn(&r).expect("turn from corpus");
        let probs = (0..turn.sentences.len())
            .map(|s| Ok(model.predict_vector(&provider.embed_sentence_in_context(&r.dialogue_id, turn, s)?)?.probs))
            .collect::<Result<Vec<_>>>()?;
        pairs.push((maxpool_labels(&probs), g));
    }
    Ok(turn_set_eval(&pairs))
}

/// Turn-level scores of the turn model with a 0.5 threshold per label.
pub fn turn_model_eval<T: Scalar>(
    model: &TurnModel<T>,
    corpus: &Corpus,
    provider: &EmbeddingProvider,
    gold: &GroundTruth,
) -> Result<TurnEvalReport> {
    let mut pairs = Vec::new();
    for (r, g) in gold_turns(corpus, gold) {
        let turn = corpus.turn(&r).expect("turn from corpus");
        let p = model.predict_turn(provider, &r.dialogue_id, turn)?;
        let half = T::of(0.5);
        pairs.push((p.iter().filter(|&(_, v)| v > half).map(|(l, _)| l).collect(), g));
    }
    Ok(turn_set_eval(&pairs))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Mean and population standard deviation of each named metric.
pub fn summarize_runs(runs: &[BTreeMap<String, f64>]) -> Result<BTreeMap<String, MeanStd>> {
    if runs.len() < 2 {
        return Err(Error::Precondition("seed variance needs at least two runs".into()));
    }
    let mut out = BTreeMap::new();
    for key in runs[0].keys() {
        let vals: Vec<f64> = runs
            .iter()
            .map(|r| r.get(key).copied().ok_or_else(|| Error::Precondition(format!("metric `{key}` missing from a run"))))
            .collect::<Result<_>>()?;
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        out.insert(key.clone(), MeanStd { mean, std: var.sqrt() });
    }
    Ok(out)
}

/// Runs `run` once per seed and summarizes the metrics it returns.
pub fn seed_variance<F>(seeds: &[u64], run: F) -> Result<BTreeMap<String, MeanStd>>
where
    F: Fn(u64) -> Result<BTreeMap<String, f64>>,
{
    if seeds.len() < 2 {
        return Err(Error::Precondition("seed variance needs at least two seeds".into()));
    }
    let runs = seeds.iter().map(|&s| run(s)).collect::<Result<Vec<_>>>()?;
    summarize_runs(&runs)
}

/// Flat metric map of a sentence report, for seed summaries.
pub fn report_metrics(report: &EvalReport) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    m.insert("accuracy".to_string(), report.accuracy);
    for (l, s) in &report.per_class {
        m.insert(format!("f1.{l}"), s.f1);
    }
    m
}

fn short(l: SectionLabel) -> &'static str {
    match l {
        SectionLabel::HistoryTaking => "HT",
        SectionLabel::Summarization => "Summ",
        SectionLabel::Education => "Edu",
        SectionLabel::CarePlan => "Plan",
        SectionLabel::Other => "Other",
    }
}

/// Rounds as rows, per-class F1 and four-class accuracy as columns. A
/// `MeanStd` entry per cell is rendered as `mean±std`.
pub fn render_sentence_table(rows: &[(String, BTreeMap<String, MeanStd>)]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<10}", "Model");
    for l in SectionLabel::ALL {
        let _ = write!(s, " {:>13}", short(l));
    }
    let _ = writeln!(s, " {:>13}", "Acc");
    for (name, m) in rows {
        let _ = write!(s, "{name:<10}");
        let keys = SectionLabel::ALL.iter().map(|l| format!("f1.{l}")).chain(["accuracy".to_string()]);
        for k in keys {
            let cell = match m.get(&k) {
                Some(v) if v.std > 0.0 => format!("{:.3}±{:.3}", v.mean, v.std),
                Some(v) => format!("{:.3}", v.mean),
                None => "-".into(),
            };
            let _ = write!(s, " {cell:>13}");
        }
        s.push('\n');
    }
    s
}

/// Models as rows, per-class turn F1 and binary accuracy as columns.
pub fn render_turn_table(rows: &[(String, TurnEvalReport)]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<14}", "Model");
    for l in SectionLabel::ALL {
        let _ = write!(s, " {:>6}", short(l));
    }
    let _ = writeln!(s, " {:>8}", "BinAcc");
    for (name, r) in rows {
        let _ = write!(s, "{name:<14}");
        for l in SectionLabel::ALL {
            let _ = write!(s, " {:>6.3}", r.f1(l));
        }
        let _ = writeln!(s, " {:>8.3}", r.binary_accuracy);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use SectionLabel::*;

    #[test]
    fn hand_counted_summary_example() {
        let mut pairs = vec![(Summarization, Summarization); 2];
        pairs.extend(vec![(Other, Summarization); 8]);
        pairs.extend(vec![(Other, Other); 90]);
        let r = eval_pairs(&pairs, AccuracyScope::GoldFunctional);
        let s = r.per_class[&Summarization];
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 0.2);
        assert!((s.f1 - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.accuracy - 0.2).abs() < 1e-12);
    }

    #[test]
    fn all_other_scores_zero() {
        let pairs: Vec<_> = SectionLabel::ALL.iter().map(|&g| (Other, g)).collect();
        let r = eval_pairs(&pairs, AccuracyScope::GoldFunctional);
        for l in SectionLabel::FUNCTIONAL {
            assert_eq!(r.f1(l), 0.0);
        }
        assert_eq!(r.accuracy, 0.0);
    }

    #[test]
    fn either_scope_counts_false_functional() {
        let pairs = vec![(Education, Education), (Education, Other), (Other, Other)];
        assert_eq!(eval_pairs(&pairs, AccuracyScope::GoldFunctional).accuracy, 1.0);
        assert_eq!(eval_pairs(&pairs, AccuracyScope::EitherFunctional).accuracy, 0.5);
    }

    #[test]
    fn confusion_marks_empty_columns() {
        let m = ConfusionMatrix::from_pairs(&[(Other, Education), (Education, Education)]);
        assert_eq!(m.get(Other, Education), Some(0.5));
        assert_eq!(m.get(Other, CarePlan), None);
    }

    #[test]
    fn coverage_gap_reported() {
        let gold: GroundTruth = [(SentenceRef::new("d", 0, 0), Other)].into_iter().collect();
        assert!(matches!(
            sentence_eval(&HashMap::new(), &gold, AccuracyScope::GoldFunctional),
            Err(Error::Coverage { count: 1, .. })
        ));
    }

    #[test]
    fn identical_embeddings_are_point_masses() {
        let x = Matrix::from_rows(&[[1.0, 2.0]; 6]).unwrap();
        let pred = vec![Other, Other, Other, Education, Education, Education];
        let cfg = SimilarityConfig {
            pairs: 100,
            ..Default::default()
        };
        let r = cosine_similarity_report::<f64>(&x, &pred, &cfg, 1).unwrap();
        for c in &r.classes {
            assert!((c.self_median - 1.0).abs() < 1e-12);
            assert!((c.other_median.unwrap() - 1.0).abs() < 1e-12);
            assert_eq!(c.self_hist.counts[49], 100);
        }
    }

    #[test]
    fn orthogonal_classes_separate() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]).unwrap();
        let pred = vec![CarePlan, CarePlan, Education, Education];
        let r = cosine_similarity_report::<f64>(&x, &pred, &SimilarityConfig { pairs: 50, ..Default::default() }, 0).unwrap();
        let c = r.class(CarePlan).unwrap();
        assert_eq!(c.self_median, 1.0);
        assert_eq!(c.other_median, Some(0.0));
    }

    #[test]
    fn maxpool_is_monotone_in_sentences() {
        let a = LabelScores([0.1, 0.1, 0.1, 0.9, 0.1f64]);
        let b = LabelScores([0.6, 0.1, 0.1, 0.1, 0.1f64]);
        assert_eq!(maxpool_labels(&[a]), BTreeSet::from([CarePlan]));
        assert_eq!(maxpool_labels(&[a, b]), BTreeSet::from([HistoryTaking, CarePlan]));
    }

    #[test]
    fn binary_accuracy_over_functional_classes() {
        let pairs = vec![(BTreeSet::from([Education]), BTreeSet::from([Education, CarePlan]))];
        let r = turn_set_eval(&pairs);
        assert_eq!(r.binary_accuracy, 0.75);
    }

    #[test]
    fn seed_variance_contract() {
        let run = |_s: u64| Ok(BTreeMap::from([("accuracy".to_string(), 0.7)]));
        let v = seed_variance(&[1, 1, 1], run).unwrap();
        assert!(v["accuracy"].std.abs() < 1e-12);
        assert!(seed_variance(&[1], run).is_err());
        let runs = vec![
            BTreeMap::from([("a".to_string(), 1.0)]),
            BTreeMap::from([("a".to_string(), 3.0)]),
        ];
        assert_eq!(summarize_runs(&runs).unwrap()["a"], MeanStd { mean: 2.0, std: 1.0 });
    }

    #[test]
    fn histogram_csv_has_fifty_rows() {
        let mut h = Histogram::new(-1.0, 1.0, 50);
        h.add(-1.0);
        h.add(1.0);
        h.add(0.0);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[49], 1);
        assert_eq!(h.counts[25], 1);
        assert_eq!(h.to_csv().lines().count(), 51);
    }
}
