//! Activity-log ingestion: TSV parsing, period bucketing with per-bundle
//! document deduplication, and a seeded synthetic log generator whose
//! ground-truth dynamics are known.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One parsed activity record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub entity_id: String,
    pub timestamp: i64,
    pub resource_text: String,
}

impl LogEntry {
    /// Renders the entry as one TSV record, without the trailing newline.
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}",
            self.entity_id, self.timestamp, self.resource_text
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    FieldCount,
    BadTimestamp,
    EmptyEntity,
    EmptyResource,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectReason::FieldCount => "field-count",
            RejectReason::BadTimestamp => "bad-timestamp",
            RejectReason::EmptyEntity => "empty-entity",
            RejectReason::EmptyResource => "empty-resource",
        };
        f.write_str(s)
    }
}

/// Parses one `entity\ttimestamp\ttext` record. A single trailing `\n` is
/// stripped; everything else in the text field is kept verbatim.
pub fn parse_log_line(line: &str) -> std::result::Result<LogEntry, RejectReason> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let mut fields = line.split('\t');
    let (Some(entity), Some(ts), Some(text), None) =
        (fields.next(), fields.next(), fields.next(), fields.next())
    else {
        return Err(RejectReason::FieldCount);
    };
    if entity.is_empty() {
        return Err(RejectReason::EmptyEntity);
    }
    let timestamp: i64 = ts.parse().map_err(|_| RejectReason::BadTimestamp)?;
    if text.trim().is_empty() {
        return Err(RejectReason::EmptyResource);
    }
    Ok(LogEntry {
        entity_id: entity.to_string(),
        timestamp,
        resource_text: text.to_string(),
    })
}

#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub entries: Vec<LogEntry>,
    pub rejected: BTreeMap<RejectReason, usize>,
    pub lines: usize,
}

impl ParseOutcome {
    pub fn rejected_total(&self) -> usize {
        self.rejected.values().sum()
    }
}

/// Parses a whole stream. Malformed lines are counted and skipped.
pub fn parse_log_stream<R: BufRead>(reader: R) -> Result<ParseOutcome> {
    let mut out = ParseOutcome::default();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io("<log stream>", e))?;
        out.lines += 1;
        match parse_log_line(&line) {
            Ok(entry) => out.entries.push(entry),
            Err(reason) => *out.rejected.entry(reason).or_default() += 1,
        }
    }
    Ok(out)
}

/// Equal-length contiguous periods starting at `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodSpec {
    pub origin: i64,
    pub length: i64,
    pub count: usize,
}

impl PeriodSpec {
    pub fn new(origin: i64, length: i64, count: usize) -> Result<Self> {
        let spec = PeriodSpec {
            origin,
            length,
            count,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.length <= 0 {
            return Err(Error::Config(format!(
                "period length must be positive, got {}",
                self.length
            )));
        }
        if self.count == 0 {
            return Err(Error::Config("period count must be positive".into()));
        }
        Ok(())
    }

    /// `floor((ts - origin) / length)` if it falls in `[0, count)`.
    pub fn period_of(&self, timestamp: i64) -> Option<usize> {
        let offset = timestamp.checked_sub(self.origin)?;
        if offset < 0 {
            return None;
        }
        let idx = offset.div_euclid(self.length);
        usize::try_from(idx).ok().filter(|&i| i < self.count)
    }
}

/// The unique content documents one entity produced in one period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityPeriodBundle {
    pub entity_id: String,
    pub period_index: usize,
    /// Distinct resource texts in first-seen order.
    pub documents: Vec<String>,
    /// Entries that landed here before deduplication.
    pub raw_count: usize,
}

pub type BundleKey = (String, usize);

#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucketing {
    #[serde(with = "bundle_map")]
    pub bundles: BTreeMap<BundleKey, EntityPeriodBundle>,
    pub dropped_out_of_range: usize,
}

impl Bucketing {
    /// All distinct entity ids, sorted.
    pub fn entities(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.bundles.keys().map(|(e, _)| e.clone()).collect();
        ids.dedup();
        ids
    }

    /// Documents of every bundle in `period`, in bundle order.
    pub fn period_corpus(&self, period: usize) -> Vec<&str> {
        self.bundles
            .values()
            .filter(|b| b.period_index == period)
            .flat_map(|b| b.documents.iter().map(String::as_str))
            .collect()
    }
}

/// Assigns each entry to its (entity, period) bundle, deduplicating
/// documents by exact bytes. Entries outside the period grid are dropped
/// and counted.
pub fn bucket_entries<'a, I>(entries: I, spec: &PeriodSpec) -> Bucketing
where
    I: IntoIterator<Item = &'a LogEntry>,
{
    let mut out = Bucketing::default();
    let mut seen: BTreeMap<BundleKey, HashSet<String>> = BTreeMap::new();
    for entry in entries {
        let Some(period) = spec.period_of(entry.timestamp) else {
            out.dropped_out_of_range += 1;
            continue;
        };
        let key = (entry.entity_id.clone(), period);
        let bundle = out
            .bundles
            .entry(key.clone())
            .or_insert_with(|| EntityPeriodBundle {
                entity_id: entry.entity_id.clone(),
                period_index: period,
                documents: Vec::new(),
                raw_count: 0,
            });
        bundle.raw_count += 1;
        if seen
            .entry(key)
            .or_default()
            .insert(entry.resource_text.clone())
        {
            bundle.documents.push(entry.resource_text.clone());
        }
    }
    out
}

// JSON object keys must be strings; bundles serialize as a plain list.
mod bundle_map {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<BundleKey, EntityPeriodBundle>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(map.values())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<BTreeMap<BundleKey, EntityPeriodBundle>, D::Error> {
        let list = Vec::<EntityPeriodBundle>::deserialize(d)?;
        Ok(list
            .into_iter()
            .map(|b| ((b.entity_id.clone(), b.period_index), b))
            .collect())
    }
}

/// Parameters of the synthetic activity generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub entity_count: usize,
    pub topic_count: usize,
    pub period_count: usize,
    pub period_origin: i64,
    pub period_length: i64,
    /// Dirichlet concentration of each entity's topic preference.
    pub base_concentration: f64,
    /// Share of each entity's preference spread evenly over all topics.
    pub base_floor: f64,
    /// Mean number of documents per entity and period before dynamics.
    pub docs_per_period: f64,
    /// Share of (entity, topic) pairs given a linear ramp over periods.
    pub trend_fraction: f64,
    /// Expected number of spatial bursts per entity over the horizon.
    pub burst_rate: f64,
    /// Latent-layout radius of a fresh burst; 0 disables bursts.
    pub burst_radius: f64,
    /// Peak multiplicative boost of a burst.
    pub burst_amplitude: f64,
    /// Lognormal sigma on intensities. At 0, counts are rounded intensities
    /// and carry no sampling noise.
    pub noise: f64,
    pub words_per_topic: usize,
    pub doc_length: usize,
    /// Probability that a word is drawn from a nearby topic's block instead
    /// of the document's own topic. 0 gives disjoint topic vocabularies.
    pub vocab_leak: f64,
    /// Latent distance scale of vocabulary leakage.
    pub leak_radius: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            entity_count: 2000,
            topic_count: 64,
            period_count: 11,
            period_origin: 1_600_000_000,
            period_length: 86_400,
            base_concentration: 0.5,
            base_floor: 0.3,
            docs_per_period: 40.0,
            trend_fraction: 0.25,
            burst_rate: 2.0,
            burst_radius: 0.12,
            burst_amplitude: 6.0,
            noise: 0.2,
            words_per_topic: 16,
            doc_length: 5,
            vocab_leak: 0.25,
            leak_radius: 0.15,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("entity_count", self.entity_count),
            ("topic_count", self.topic_count),
            ("period_count", self.period_count),
            ("words_per_topic", self.words_per_topic),
            ("doc_length", self.doc_length),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("trend_fraction", self.trend_fraction),
            ("vocab_leak", self.vocab_leak),
            ("base_floor", self.base_floor),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        for (name, v) in [
            ("base_concentration", self.base_concentration),
            ("docs_per_period", self.docs_per_period),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("burst_rate", self.burst_rate),
            ("burst_radius", self.burst_radius),
            ("burst_amplitude", self.burst_amplitude),
            ("noise", self.noise),
            ("leak_radius", self.leak_radius),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        PeriodSpec::new(self.period_origin, self.period_length, self.period_count)?;
        Ok(())
    }

    pub fn period_spec(&self) -> PeriodSpec {
        PeriodSpec {
            origin: self.period_origin,
            length: self.period_length,
            count: self.period_count,
        }
    }
}

/// What the generator actually did, for scoring the pipeline against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub topic_count: usize,
    /// Expected document count, entity -> [period][topic].
    pub intensity: BTreeMap<String, Vec<Vec<f64>>>,
    /// Vocabulary block owned by each topic.
    pub word_blocks: Vec<Vec<String>>,
    /// Latent 2D position of each topic in the unit square.
    pub positions: Vec<[f64; 2]>,
    pub vocab_leak: f64,
    pub leak_radius: f64,
}

impl GroundTruth {
    /// Probability that a word of a topic-`t` document is drawn from the
    /// block of topic `u`.
    pub fn block_mixture(&self, t: usize) -> Vec<f64> {
        let k = self.topic_count;
        let mut mix = vec![0.0; k];
        mix[t] = 1.0 - self.vocab_leak;
        if k > 1 && self.vocab_leak > 0.0 {
            let w = leak_weights(&self.positions, t, self.leak_radius);
            for (u, wu) in w.into_iter().enumerate() {
                mix[u] += self.vocab_leak * wu;
            }
        }
        mix
    }

    /// True word distribution of topic `t` as (word, probability) pairs.
    pub fn word_distribution(&self, t: usize) -> Vec<(String, f64)> {
        let mix = self.block_mixture(t);
        let mut out = Vec::new();
        for (u, block) in self.word_blocks.iter().enumerate() {
            if mix[u] == 0.0 {
                continue;
            }
            let p = mix[u] / block.len() as f64;
            out.extend(block.iter().map(|w| (w.clone(), p)));
        }
        out
    }

    /// Topic whose block contains `word`.
    pub fn owner_of(&self, word: &str) -> Option<usize> {
        self.word_blocks
            .iter()
            .position(|block| block.iter().any(|w| w == word))
    }
}

fn leak_weights(positions: &[[f64; 2]], t: usize, radius: f64) -> Vec<f64> {
    let r2 = (radius * radius).max(1e-12);
    let mut w: Vec<f64> = positions
        .iter()
        .enumerate()
        .map(|(u, p)| {
            if u == t {
                0.0
            } else {
                let d2 = dist2(*p, positions[t]);
                (-d2 / (2.0 * r2)).exp()
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 && total.is_finite() {
        w.iter_mut().for_each(|x| *x /= total);
    } else {
        // All neighbours underflowed: fall back to the nearest one.
        let nearest = (0..positions.len())
            .filter(|&u| u != t)
            .min_by(|&a, &b| {
                dist2(positions[a], positions[t]).total_cmp(&dist2(positions[b], positions[t]))
            })
            .expect("at least two topics");
        w.iter_mut().for_each(|x| *x = 0.0);
        w[nearest] = 1.0;
    }
    w
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ne", "po", "ru", "sa", "ti", "vo", "ze", "bra", "cle", "dro", "fi", "gu",
    "hy",
];

fn topic_word(topic: usize, j: usize) -> String {
    let a = SYLLABLES[topic % 16];
    let b = SYLLABLES[(topic / 16) % 16];
    let hi = topic / 256;
    if hi == 0 {
        format!("{a}{b}{j}")
    } else {
        format!("{a}{b}{hi}x{j}")
    }
}

struct Burst {
    start: usize,
    center: [f64; 2],
    velocity: [f64; 2],
    amplitude: f64,
}

/// Generates a deterministic log stream and its ground truth.
///
/// Per entity, period and topic the expected document count is
/// `docs_per_period * preference * ramp * burst`; the realized count is
/// Poisson around that intensity times lognormal noise. Bursts are centred
/// in the latent topic layout, drift and widen over the following periods,
/// so neighbouring topics rise together.
pub fn generate_synthetic_logs(cfg: &SynthConfig) -> Result<(Vec<LogEntry>, GroundTruth)> {
    cfg.validate()?;
    let k = cfg.topic_count;
    let periods = cfg.period_count;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let positions = latent_positions(k, &mut rng);
    let word_blocks: Vec<Vec<String>> = (0..k)
        .map(|t| (0..cfg.words_per_topic).map(|j| topic_word(t, j)).collect())
        .collect();
    let leak: Vec<Vec<f64>> = if k > 1 {
        (0..k)
            .map(|t| cumulative(&leak_weights(&positions, t, cfg.leak_radius)))
            .collect()
    } else {
        vec![vec![1.0]]
    };

    let gamma = Gamma::new(cfg.base_concentration, 1.0)
        .map_err(|e| Error::Config(format!("base_concentration: {e}")))?;
    let width = entity_width(cfg.entity_count);
    let mut entries = Vec::new();
    let mut intensity = BTreeMap::new();

    // Dynamics first (so the stream order does not perturb them), then text.
    let mut counts: Vec<Vec<Vec<usize>>> = Vec::with_capacity(cfg.entity_count);
    for e in 0..cfg.entity_count {
        let mut pref: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = pref.iter().sum::<f64>().max(f64::MIN_POSITIVE);
        pref.iter_mut()
            .for_each(|p| *p = (1.0 - cfg.base_floor) * *p / total + cfg.base_floor / k as f64);

        let slopes: Vec<f64> = (0..k)
            .map(|_| {
                if rng.gen::<f64>() < cfg.trend_fraction {
                    rng.gen_range(-0.8..2.0)
                } else {
                    0.0
                }
            })
            .collect();

        let bursts = if cfg.burst_radius > 0.0 && cfg.burst_rate > 0.0 && cfg.burst_amplitude > 0.0
        {
            let n = Poisson::new(cfg.burst_rate)
                .map(|p| p.sample(&mut rng) as usize)
                .unwrap_or(0);
            (0..n)
                .map(|_| Burst {
                    start: rng.gen_range(0..periods),
                    center: [rng.gen(), rng.gen()],
                    velocity: [rng.gen_range(-0.06..0.06), rng.gen_range(-0.06..0.06)],
                    amplitude: cfg.burst_amplitude * rng.gen_range(0.5..1.5),
                })
                .collect()
        } else {
            Vec::new()
        };

        let horizon = (periods.max(2) - 1) as f64;
        let mut lam = vec![vec![0.0; k]; periods];
        let mut cnt = vec![vec![0usize; k]; periods];
        for p in 0..periods {
            for t in 0..k {
                let ramp = (1.0 + slopes[t] * p as f64 / horizon).max(0.0);
                let mut boost = 1.0;
                for b in &bursts {
                    if p < b.start {
                        continue;
                    }
                    let age = (p - b.start) as f64;
                    let c = [
                        b.center[0] + b.velocity[0] * age,
                        b.center[1] + b.velocity[1] * age,
                    ];
                    let r = cfg.burst_radius * (1.0 + 0.35 * age);
                    boost += b.amplitude * (-dist2(positions[t], c) / (2.0 * r * r)).exp();
                }
                let l = cfg.docs_per_period * pref[t] * ramp * boost;
                lam[p][t] = l;
                cnt[p][t] = if cfg.noise == 0.0 {
                    l.round() as usize
                } else {
                    let z: f64 = rng.sample(StandardNormal);
                    let jitter = (cfg.noise * z - 0.5 * cfg.noise * cfg.noise).exp();
                    let mean = l * jitter;
                    if mean > 0.0 {
                        Poisson::new(mean)
                            .map(|d| d.sample(&mut rng) as usize)
                            .unwrap_or(0)
                    } else {
                        0
                    }
                };
            }
        }
        intensity.insert(entity_name(e, width), lam);
        counts.push(cnt);
    }

    for p in 0..periods {
        let start = cfg.period_origin + p as i64 * cfg.period_length;
        for (e, cnt) in counts.iter().enumerate() {
            let id = entity_name(e, width);
            for t in 0..k {
                for _ in 0..cnt[p][t] {
                    let words: Vec<&str> = (0..cfg.doc_length)
                        .map(|_| {
                            let block = if k > 1 && rng.gen::<f64>() < cfg.vocab_leak {
                                sample_cumulative(&leak[t], rng.gen())
                            } else {
                                t
                            };
                            word_blocks[block][rng.gen_range(0..cfg.words_per_topic)].as_str()
                        })
                        .collect();
                    entries.push(LogEntry {
                        entity_id: id.clone(),
                        timestamp: start + rng.gen_range(0..cfg.period_length),
                        resource_text: words.join(" "),
                    });
                }
            }
        }
    }

    let truth = GroundTruth {
        topic_count: k,
        intensity,
        word_blocks,
        positions,
        vocab_leak: cfg.vocab_leak,
        leak_radius: cfg.leak_radius,
    };
    Ok((entries, truth))
}

fn entity_width(n: usize) -> usize {
    n.saturating_sub(1).max(1).to_string().len()
}

fn entity_name(e: usize, width: usize) -> String {
    format!("ent{e:0width$}")
}

/// Jittered lattice in the unit square.
fn latent_positions(k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let side = (k as f64).sqrt().ceil() as usize;
    let cell = 1.0 / side as f64;
    (0..k)
        .map(|t| {
            let (r, c) = (t / side, t % side);
            [
                (c as f64 + 0.25 + 0.5 * rng.gen::<f64>()) * cell,
                (r as f64 + 0.25 + 0.5 * rng.gen::<f64>()) * cell,
            ]
        })
        .collect()
}

fn cumulative(w: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    w.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

fn sample_cumulative(cdf: &[f64], u: f64) -> usize {
    let target = u * cdf.last().copied().unwrap_or(1.0);
    cdf.iter()
        .position(|&c| target < c)
        .unwrap_or(cdf.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(e: &str, ts: i64, text: &str) -> LogEntry {
        LogEntry {
            entity_id: e.into(),
            timestamp: ts,
            resource_text: text.into(),
        }
    }

    #[test]
    fn parses_well_formed_line() {
        assert_eq!(
            parse_log_line("e1\t1000\tdns lookup example.com"),
            Ok(entry("e1", 1000, "dns lookup example.com"))
        );
        assert_eq!(
            parse_log_line("e1\t1000\t  padded text \n"),
            Ok(entry("e1", 1000, "  padded text "))
        );
    }

    #[test]
    fn rejects_malformed_lines() {
        assert_eq!(parse_log_line("e1\t1000"), Err(RejectReason::FieldCount));
        assert_eq!(parse_log_line("e1\t1\ta\tb"), Err(RejectReason::FieldCount));
        assert_eq!(
            parse_log_line("e1\tabc\tx"),
            Err(RejectReason::BadTimestamp)
        );
        assert_eq!(parse_log_line("\t5\tx"), Err(RejectReason::EmptyEntity));
        assert_eq!(
            parse_log_line("e\t5\t   "),
            Err(RejectReason::EmptyResource)
        );
        assert_eq!(RejectReason::FieldCount.to_string(), "field-count");
    }

    #[test]
    fn stream_counts_rejections_without_aborting() {
        let text = "a\t1\tx\nbad\nb\tzz\ty\nc\t3\tz\n";
        let out = parse_log_stream(text.as_bytes()).unwrap();
        assert_eq!(out.lines, 4);
        assert_eq!(out.entries.len(), 2);
        assert_eq!(out.rejected[&RejectReason::FieldCount], 1);
        assert_eq!(out.rejected[&RejectReason::BadTimestamp], 1);
        assert_eq!(out.rejected_total(), 2);
    }

    #[test]
    fn period_index_uses_floor_division() {
        let spec = PeriodSpec::new(0, 60, 3).unwrap();
        assert_eq!(spec.period_of(0), Some(0));
        assert_eq!(spec.period_of(59), Some(0));
        assert_eq!(spec.period_of(60), Some(1));
        assert_eq!(spec.period_of(179), Some(2));
        assert_eq!(spec.period_of(180), None);
        assert_eq!(spec.period_of(-1), None);
        assert!(PeriodSpec::new(0, 0, 3).is_err());
        assert!(PeriodSpec::new(0, 10, 0).is_err());
    }

    #[test]
    fn bucketing_dedups_and_drops() {
        let spec = PeriodSpec::new(0, 60, 2).unwrap();
        let entries = vec![
            entry("e1", 0, "same"),
            entry("e1", 59, "same"),
            entry("e1", 30, "other"),
            entry("e1", 120, "late"),
            entry("e2", 61, "same"),
        ];
        let b = bucket_entries(&entries, &spec);
        assert_eq!(b.dropped_out_of_range, 1);
        let e1 = &b.bundles[&("e1".to_string(), 0)];
        assert_eq!(e1.documents, vec!["same", "other"]);
        assert_eq!(e1.raw_count, 3);
        assert_eq!(b.bundles[&("e2".to_string(), 1)].documents, vec!["same"]);
        assert_eq!(b.entities(), vec!["e1", "e2"]);
        assert_eq!(b.period_corpus(0), vec!["same", "other"]);
    }

    #[test]
    fn bucketing_serializes_as_list() {
        let spec = PeriodSpec::new(0, 60, 2).unwrap();
        let b = bucket_entries(&[entry("e1", 3, "x y")], &spec);
        let json = serde_json::to_string(&b).unwrap();
        assert!(json.contains("\"bundles\":[{"));
        let back: Bucketing = serde_json::from_str(&json).unwrap();
        assert_eq!(back, b);
    }

    fn tiny_cfg() -> SynthConfig {
        SynthConfig {
            entity_count: 5,
            topic_count: 9,
            period_count: 4,
            docs_per_period: 10.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let cfg = tiny_cfg();
        let (a, ta) = generate_synthetic_logs(&cfg).unwrap();
        let (b, tb) = generate_synthetic_logs(&cfg).unwrap();
        let ra: String = a.iter().map(|e| e.to_tsv() + "\n").collect();
        let rb: String = b.iter().map(|e| e.to_tsv() + "\n").collect();
        assert_eq!(ra.as_bytes(), rb.as_bytes());
        assert_eq!(ta, tb);
        let other = SynthConfig { seed: 8, ..cfg };
        let (c, _) = generate_synthetic_logs(&other).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn no_dynamics_gives_constant_counts() {
        let cfg = SynthConfig {
            trend_fraction: 0.0,
            noise: 0.0,
            burst_rate: 0.0,
            vocab_leak: 0.0,
            ..tiny_cfg()
        };
        let (entries, truth) = generate_synthetic_logs(&cfg).unwrap();
        let spec = cfg.period_spec();
        // count emitted documents per (entity, period, topic)
        let mut counts: BTreeMap<(String, usize, usize), usize> = BTreeMap::new();
        for e in &entries {
            let p = spec.period_of(e.timestamp).unwrap();
            let first = e.resource_text.split(' ').next().unwrap();
            let t = truth.owner_of(first).unwrap();
            *counts.entry((e.entity_id.clone(), p, t)).or_default() += 1;
        }
        for (entity, _) in &truth.intensity {
            for t in 0..cfg.topic_count {
                let c0 = counts.get(&(entity.clone(), 0, t)).copied().unwrap_or(0);
                for p in 1..cfg.period_count {
                    let c = counts.get(&(entity.clone(), p, t)).copied().unwrap_or(0);
                    assert_eq!(c, c0, "entity {entity} topic {t} period {p}");
                }
            }
        }
    }

    #[test]
    fn disjoint_blocks_identify_topics() {
        let cfg = SynthConfig {
            vocab_leak: 0.0,
            ..tiny_cfg()
        };
        let (entries, truth) = generate_synthetic_logs(&cfg).unwrap();
        assert!(!entries.is_empty());
        for e in &entries {
            let owners: HashSet<usize> = e
                .resource_text
                .split(' ')
                .map(|w| truth.owner_of(w).expect("word belongs to a block"))
                .collect();
            assert_eq!(owners.len(), 1, "{}", e.resource_text);
        }
        let all: HashSet<&String> = truth.word_blocks.iter().flatten().collect();
        assert_eq!(all.len(), cfg.topic_count * cfg.words_per_topic);
    }

    #[test]
    fn ground_truth_word_distribution_is_normalized() {
        let (_, truth) = generate_synthetic_logs(&tiny_cfg()).unwrap();
        for t in 0..truth.topic_count {
            let s: f64 = truth.word_distribution(t).iter().map(|(_, p)| p).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(truth.intensity.len(), 5);
        assert_eq!(truth.intensity["ent0"].len(), 4);
        assert_eq!(truth.intensity["ent0"][0].len(), 9);
    }

    #[test]
    fn nearby_topics_co_burst() {
        let cfg = SynthConfig {
            entity_count: 60,
            topic_count: 16,
            period_count: 6,
            trend_fraction: 0.0,
            noise: 0.0,
            ..SynthConfig::default()
        };
        let (_, truth) = generate_synthetic_logs(&cfg).unwrap();
        // correlate period-over-period log-intensity changes of topic pairs
        let k = cfg.topic_count;
        let (mut near, mut far) = (Vec::new(), Vec::new());
        for lam in truth.intensity.values() {
            for a in 0..k {
                for b in (a + 1)..k {
                    let d = dist2(truth.positions[a], truth.positions[b]).sqrt();
                    let da: Vec<f64> = (1..6).map(|p| (lam[p][a] / lam[p - 1][a]).ln()).collect();
                    let db: Vec<f64> = (1..6).map(|p| (lam[p][b] / lam[p - 1][b]).ln()).collect();
                    let co: f64 = da.iter().zip(&db).map(|(x, y)| x * y).sum();
                    if d < 0.3 {
                        near.push(co);
                    } else if d > 0.7 {
                        far.push(co);
                    }
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&near) > 2.0 * mean(&far).max(1e-9),
            "{} vs {}",
            mean(&near),
            mean(&far)
        );
    }

    #[test]
    fn invalid_config_is_rejected() {
        let bad = SynthConfig {
            trend_fraction: 1.5,
            ..SynthConfig::default()
        };
        assert!(matches!(
            generate_synthetic_logs(&bad),
            Err(Error::Config(_))
        ));
        let bad = SynthConfig {
            entity_count: 0,
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    fn arb_entries() -> impl Strategy<Value = Vec<LogEntry>> {
        prop::collection::vec(
            (0usize..3, -20i64..200, 0usize..4)
                .prop_map(|(e, ts, d)| entry(&format!("e{e}"), ts, &format!("doc {d}"))),
            0..60,
        )
    }

    proptest! {
        #[test]
        fn bucketing_partitions_input(entries in arb_entries()) {
            let spec = PeriodSpec::new(0, 50, 3).unwrap();
            let b = bucket_entries(&entries, &spec);
            let raw: usize = b.bundles.values().map(|x| x.raw_count).sum();
            prop_assert_eq!(raw + b.dropped_out_of_range, entries.len());
            for bundle in b.bundles.values() {
                let uniq: HashSet<&String> = bundle.documents.iter().collect();
                prop_assert_eq!(uniq.len(), bundle.documents.len());
            }
        }

        #[test]
        fn bucketing_twice_concatenated_matches_once(entries in arb_entries()) {
            let spec = PeriodSpec::new(0, 50, 3).unwrap();
            let once = bucket_entries(&entries, &spec);
            let doubled: Vec<LogEntry> = entries.iter().chain(entries.iter()).cloned().collect();
            let twice = bucket_entries(&doubled, &spec);
            prop_assert_eq!(once.bundles.len(), twice.bundles.len());
            for (key, a) in &once.bundles {
                prop_assert_eq!(&a.documents, &twice.bundles[key].documents);
            }
        }

        #[test]
        fn tsv_round_trip(e in 0usize..5, ts in any::<i64>(), text in "[a-z][a-z ]{0,20}") {
            let original = entry(&format!("e{e}"), ts, &text);
            prop_assert_eq!(parse_log_line(&original.to_tsv()), Ok(original));
        }
    }
}
