//! Synthetic corpora with a planted, stated map from text to engagement.
//!
//! Every component is filled with pseudo-words from a fixed filler vocabulary. The planted
//! keywords never collide with filler words. Each "slot" of the signal component (the query,
//! the question, each answer, or each of the first `positions` titles or snippets) receives
//! each keyword independently with probability `rate`, at most once. Engagement is
//! `clamp(round(intercept + Σ weight · count + N(0, σ²)), 0, 10)`.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::corpus::{
    ClarificationRecord, Corpus, Impression, Provenance, Serp, SerpResult, MAX_ANSWERS, MAX_ENGAGEMENT, MAX_RESULTS,
    MIN_ANSWERS,
};
use crate::featurize::{analyze, Component};

const SYLLABLES: [&str; 20] = [
    "ba", "ko", "ri", "su", "te", "mo", "la", "ne", "pi", "do", "fu", "ga", "hi", "jo", "ku", "me", "no", "ra", "si", "vo",
];

/// Filler word number `i`: three syllables, distinct for `i < 8000`.
pub fn filler_word(i: usize) -> String {
    let n = SYLLABLES.len();
    format!("{}{}{}", SYLLABLES[i / (n * n) % n], SYLLABLES[i / n % n], SYLLABLES[i % n])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeywordWeight {
    pub word: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedSignal {
    pub component: Component,
    pub keywords: Vec<KeywordWeight>,
    pub intercept: f64,
    /// For titles and snippets: only the first `positions` results carry keywords.
    pub positions: usize,
    /// Per-slot, per-keyword insertion probability.
    pub rate: f64,
}

impl Default for PlantedSignal {
    /// "widget" in each of the first five titles with probability ½, weight 1.5, centred on 5.
    fn default() -> Self {
        Self {
            component: Component::Titles,
            keywords: vec![KeywordWeight {
                word: "widget".into(),
                weight: 1.5,
            }],
            intercept: 1.25,
            positions: 5,
            rate: 0.5,
        }
    }
}

impl PlantedSignal {
    /// The noiseless signal of `record`: intercept plus weighted keyword counts over the
    /// signal component.
    pub fn value(&self, record: &ClarificationRecord) -> f64 {
        let texts: Vec<&str> = match self.component {
            Component::Query => vec![&record.query],
            Component::Question => vec![&record.question],
            Component::Answers => record.answers.iter().map(String::as_str).collect(),
            Component::Titles | Component::Snippets => match &record.serp {
                Some(s) => s
                    .results
                    .iter()
                    .take(self.positions)
                    .map(|r| if self.component == Component::Titles { r.title.as_str() } else { r.snippet.as_str() })
                    .collect(),
                None => vec![],
            },
        };
        let mut v = self.intercept;
        for t in texts {
            let words = analyze(t, true);
            for k in &self.keywords {
                v += k.weight * words.iter().filter(|w| **w == k.word).count() as f64;
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_records: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub filler_vocabulary: usize,
    pub signal: PlantedSignal,
    pub results_per_query: usize,
    pub words_per_title: usize,
    pub words_per_snippet: usize,
    pub min_query_words: usize,
    pub max_query_words: usize,
    /// Records sharing one query (and its SERP) with different panes.
    pub panes_per_query: usize,
    /// Probability that each answer is copied into one result snippet.
    pub answer_coverage_rate: f64,
    /// Fraction of queries that get a SERP at all.
    pub serp_rate: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_records: 5000,
            seed: 0,
            noise_sigma: 1.0,
            filler_vocabulary: 100,
            signal: PlantedSignal::default(),
            results_per_query: MAX_RESULTS,
            words_per_title: 4,
            words_per_snippet: 10,
            min_query_words: 1,
            max_query_words: 5,
            panes_per_query: 1,
            answer_coverage_rate: 0.3,
            serp_rate: 1.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidSpec(m));
        if self.n_records == 0 {
            return bad("n_records must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma));
        }
        if !(1..=8000).contains(&self.filler_vocabulary) {
            return bad("filler_vocabulary must be in 1..=8000".into());
        }
        if self.results_per_query > MAX_RESULTS {
            return bad(format!("results_per_query must be at most {MAX_RESULTS}"));
        }
        if self.words_per_title == 0 || self.words_per_snippet == 0 {
            return bad("titles and snippets need at least one word".into());
        }
        if self.min_query_words == 0 || self.min_query_words > self.max_query_words {
            return bad("query word range must satisfy 1 <= min <= max".into());
        }
        if self.panes_per_query == 0 {
            return bad("panes_per_query must be positive".into());
        }
        for (name, p) in [
            ("answer_coverage_rate", self.answer_coverage_rate),
            ("serp_rate", self.serp_rate),
            ("signal.rate", self.signal.rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        let s = &self.signal;
        if matches!(s.component, Component::Titles | Component::Snippets) && s.positions > self.results_per_query {
            return bad(format!(
                "signal.positions {} exceeds results_per_query {}",
                s.positions, self.results_per_query
            ));
        }
        if !s.intercept.is_finite() || s.keywords.iter().any(|k| !k.weight.is_finite()) {
            return bad("signal weights must be finite".into());
        }
        let filler: BTreeSet<String> = (0..self.filler_vocabulary).map(filler_word).collect();
        let mut seen = BTreeSet::new();
        for k in &s.keywords {
            let tokens = analyze(&k.word, true);
            if tokens.len() != 1 || tokens[0] != k.word {
                return bad(format!("keyword `{}` must be a single lowercase alphanumeric token", k.word));
            }
            if filler.contains(&k.word) {
                return bad(format!("keyword `{}` collides with a filler word", k.word));
            }
            if !seen.insert(k.word.clone()) {
                return bad(format!("keyword `{}` listed twice", k.word));
            }
        }
        Ok(())
    }

    /// Mean and variance of the number of signal slots per record.
    fn slot_moments(&self) -> (f64, f64) {
        match self.signal.component {
            Component::Query | Component::Question => (1.0, 0.0),
            Component::Answers => {
                let k = (MAX_ANSWERS - MIN_ANSWERS + 1) as f64;
                ((MIN_ANSWERS + MAX_ANSWERS) as f64 / 2.0, (k * k - 1.0) / 12.0)
            }
            Component::Titles | Component::Snippets => (self.signal.positions as f64 * self.serp_rate, {
                let p = self.signal.positions as f64;
                p * p * self.serp_rate * (1.0 - self.serp_rate)
            }),
        }
    }

    /// Variance of the noiseless signal implied by the spec.
    ///
    /// Given `n` slots, each keyword count is Binomial(n, rate) and independent of the others,
    /// so `Var = E[n]·r(1−r)·Σw² + Var(n)·r²·(Σw)²`.
    pub fn signal_variance(&self) -> f64 {
        let (en, vn) = self.slot_moments();
        let r = self.signal.rate;
        let sum_sq: f64 = self.signal.keywords.iter().map(|k| k.weight * k.weight).sum();
        let sum: f64 = self.signal.keywords.iter().map(|k| k.weight).sum();
        en * r * (1.0 - r) * sum_sq + vn * r * r * sum * sum
    }

    /// Best achievable R², `Var(signal) / (Var(signal) + σ²)`, ignoring rounding and
    /// clamping.
    pub fn variance_ratio_ceiling(&self) -> f64 {
        let v = self.signal_variance();
        let total = v + self.noise_sigma * self.noise_sigma;
        if total > 0.0 {
            v / total
        } else {
            0.0
        }
    }
}

struct Generator<'a> {
    spec: &'a SyntheticSpec,
    filler: Vec<String>,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn words(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.filler.choose(&mut self.rng).expect("non-empty").clone()).collect()
    }

    /// Inserts each keyword with probability `rate` at a random position.
    fn plant(&mut self, words: &mut Vec<String>) {
        let s = &self.spec.signal;
        for k in &s.keywords {
            if self.rng.random_bool(s.rate) {
                let at = self.rng.random_range(0..=words.len());
                words.insert(at, k.word.clone());
            }
        }
    }

    fn text(&mut self, n: usize, planted: bool) -> String {
        let mut w = self.words(n);
        if planted {
            self.plant(&mut w);
        }
        w.join(" ")
    }

    fn query(&mut self, used: &mut BTreeSet<String>) -> String {
        let (lo, hi) = (self.spec.min_query_words, self.spec.max_query_words);
        let mut len = self.rng.random_range(lo..=hi);
        let planted = self.spec.signal.component == Component::Query;
        loop {
            for _ in 0..20 {
                let q = self.text(len, planted);
                if used.insert(q.clone()) {
                    return q;
                }
            }
            len += 1;
        }
    }
}

/// Generates a corpus from `spec`. Equal specs give identical corpora.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus, ExperimentError> {
    spec.validate()?;
    let mut g = Generator {
        spec,
        filler: (0..spec.filler_vocabulary).map(filler_word).collect(),
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
    };
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    let signal = &spec.signal;
    let mut used = BTreeSet::new();
    let mut records = Vec::with_capacity(spec.n_records);
    let mut q_index = 0usize;
    while records.len() < spec.n_records {
        let query = g.query(&mut used);
        let serp = g.rng.random_bool(spec.serp_rate).then(|| {
            let results = (0..spec.results_per_query)
                .map(|p| {
                    let hot = p < signal.positions;
                    let title = g.text(spec.words_per_title, hot && signal.component == Component::Titles);
                    let snippet = g.text(spec.words_per_snippet, hot && signal.component == Component::Snippets);
                    SerpResult {
                        title,
                        url: format!("https://example.org/{q_index}/{p}"),
                        snippet,
                    }
                })
                .collect();
            Serp::new(results)
        });
        for _ in 0..spec.panes_per_query {
            if records.len() == spec.n_records {
                break;
            }
            let question = format!("what {} do you need", g.text(1, signal.component == Component::Question));
            let n_answers = g.rng.random_range(MIN_ANSWERS..=MAX_ANSWERS);
            let answers: Vec<String> = (0..n_answers)
                .map(|_| {
                    let n = g.rng.random_range(1..=2);
                    g.text(n, signal.component == Component::Answers)
                })
                .collect();
            let mut serp = serp.clone();
            if let Some(s) = serp.as_mut().filter(|s| !s.results.is_empty()) {
                for a in &answers {
                    if g.rng.random_bool(spec.answer_coverage_rate) {
                        let at = g.rng.random_range(0..s.results.len());
                        // Appended after the planted region of snippet words; coverage never
                        // introduces keywords because answers are keyword-free unless the
                        // signal lives in the answers.
                        if signal.component != Component::Answers {
                            s.results[at].snippet.push(' ');
                            s.results[at].snippet.push_str(a);
                        }
                    }
                }
            }
            let impression = *Impression::ALL.choose(&mut g.rng).expect("non-empty");
            let mut record = ClarificationRecord {
                query: query.clone(),
                question,
                answers,
                impression,
                engagement: 0,
                answer_click_probs: None,
                serp,
            };
            let y = signal.value(&record) + noise.sample(&mut g.rng);
            record.engagement = y.round().clamp(0.0, f64::from(MAX_ENGAGEMENT)) as u8;
            records.push(record);
        }
        q_index += 1;
    }
    let provenance = Provenance {
        derived: vec![format!("synthetic(n={},seed={})", spec.n_records, spec.seed)],
        ..Default::default()
    };
    Ok(Corpus::new(records, provenance)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn widget_count(r: &ClarificationRecord, first: usize) -> usize {
        r.serp
            .as_ref()
            .unwrap()
            .results
            .iter()
            .take(first)
            .map(|x| x.title.split(' ').filter(|w| *w == "widget").count())
            .sum()
    }

    #[test]
    fn zero_noise_makes_engagement_the_planted_count() {
        let spec = SyntheticSpec {
            n_records: 300,
            noise_sigma: 0.0,
            signal: PlantedSignal {
                keywords: vec![KeywordWeight {
                    word: "widget".into(),
                    weight: 1.0,
                }],
                intercept: 0.0,
                positions: 10,
                ..Default::default()
            },
            ..Default::default()
        };
        let c = generate_synthetic(&spec).unwrap();
        assert_eq!(c.len(), 300);
        for r in c.records() {
            assert_eq!(r.engagement as usize, widget_count(r, 10));
        }
        assert!(c.records().iter().map(|r| r.engagement).collect::<BTreeSet<_>>().len() > 3);
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let spec = SyntheticSpec {
            n_records: 50,
            ..Default::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.records(), b.records());
        let c = generate_synthetic(&SyntheticSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.records(), c.records());
    }

    #[test]
    fn records_are_valid_and_queries_unique() {
        let spec = SyntheticSpec {
            n_records: 400,
            ..Default::default()
        };
        let c = generate_synthetic(&spec).unwrap();
        let queries: BTreeSet<_> = c.records().iter().map(|r| &r.query).collect();
        assert_eq!(queries.len(), 400);
        assert_eq!(c.multi_pane_queries().count(), 0);
        for r in c.records() {
            assert!(!r.query.contains("widget"));
            let s = r.serp.as_ref().unwrap();
            assert_eq!(s.len(), 10);
            assert!(s.results[5..].iter().all(|x| !x.title.contains("widget")));
        }
    }

    #[test]
    fn multi_pane_queries_share_serps() {
        let spec = SyntheticSpec {
            n_records: 30,
            panes_per_query: 3,
            signal: PlantedSignal {
                component: Component::Question,
                ..Default::default()
            },
            ..Default::default()
        };
        let c = generate_synthetic(&spec).unwrap();
        assert_eq!(c.multi_pane_queries().count(), 10);
        for (_, idx) in c.multi_pane_queries() {
            let urls = |i: usize| c.records()[i].serp.as_ref().unwrap().results.iter().map(|r| r.url.clone()).collect::<Vec<_>>();
            assert_eq!(urls(idx[0]), urls(idx[1]));
        }
    }

    #[test]
    fn empirical_signal_variance_matches_the_formula() {
        for component in [Component::Titles, Component::Answers, Component::Query] {
            let spec = SyntheticSpec {
                n_records: 4000,
                noise_sigma: 0.0,
                signal: PlantedSignal {
                    component,
                    keywords: vec![
                        KeywordWeight { word: "alpha".into(), weight: 0.8 },
                        KeywordWeight { word: "beta".into(), weight: -0.5 },
                    ],
                    intercept: 5.0,
                    positions: 5,
                    rate: 0.3,
                },
                ..Default::default()
            };
            let c = generate_synthetic(&spec).unwrap();
            let v: Vec<f64> = c.records().iter().map(|r| spec.signal.value(r)).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
            let expected = spec.signal_variance();
            assert!((var - expected).abs() < 0.08 * expected, "{component:?}: {var} vs {expected}");
        }
    }

    #[test]
    fn default_ceiling() {
        let spec = SyntheticSpec::default();
        assert!((spec.signal_variance() - 2.8125).abs() < 1e-12);
        assert!((spec.variance_ratio_ceiling() - 2.8125 / 3.8125).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let base = SyntheticSpec::default();
        let cases = [
            SyntheticSpec { n_records: 0, ..base.clone() },
            SyntheticSpec { noise_sigma: -1.0, ..base.clone() },
            SyntheticSpec { panes_per_query: 0, ..base.clone() },
            SyntheticSpec { results_per_query: 3, ..base.clone() },
            SyntheticSpec {
                signal: PlantedSignal {
                    keywords: vec![KeywordWeight { word: filler_word(3), weight: 1.0 }],
                    ..Default::default()
                },
                ..base.clone()
            },
            SyntheticSpec {
                signal: PlantedSignal {
                    keywords: vec![KeywordWeight { word: "Two Words".into(), weight: 1.0 }],
                    ..Default::default()
                },
                ..base.clone()
            },
        ];
        for spec in cases {
            assert!(matches!(generate_synthetic(&spec), Err(ExperimentError::InvalidSpec(_))));
        }
    }

    #[test]
    fn filler_words_are_distinct() {
        let words: BTreeSet<String> = (0..8000).map(filler_word).collect();
        assert_eq!(words.len(), 8000);
    }
}
