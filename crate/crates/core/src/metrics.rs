//! Per-entity, per-period topical volume and its tensor dump format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{ensure_dir, read_f64_le, read_json, write_f64_le, write_json};
use crate::loglab::{Bucketing, EntityPeriodBundle, PeriodSpec};
use crate::topics::ActivityRelevance;

/// Topical volume of one entity in one period, one value per topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicalMetricVector {
    pub entity_id: String,
    pub period_index: usize,
    pub values: Vec<f64>,
}

/// Consecutive metric vectors of one entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub entity_id: String,
    pub vectors: Vec<TopicalMetricVector>,
}

impl MetricSeries {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

fn relevance_of<'a>(
    relevances: &'a BTreeMap<String, ActivityRelevance>,
    doc: &str,
    k: usize,
) -> Result<&'a ActivityRelevance> {
    let r = relevances
        .get(doc)
        .ok_or_else(|| Error::Data(format!("no relevance vector for document {doc:?}")))?;
    if r.theta.len() != k {
        return Err(Error::shape("relevance vector", &[k], &[r.theta.len()]));
    }
    Ok(r)
}

/// `ln(1 + sum of theta_t over the bundle's documents)` for every topic.
///
/// Documents are summed in byte order so the result does not depend on the
/// order they were logged in.
pub fn bundle_volumes(
    bundle: &EntityPeriodBundle,
    relevances: &BTreeMap<String, ActivityRelevance>,
    k: usize,
) -> Result<Vec<f64>> {
    let mut docs: Vec<&String> = bundle.documents.iter().collect();
    docs.sort_unstable();
    let mut sums = vec![0.0; k];
    for doc in docs {
        let r = relevance_of(relevances, doc, k)?;
        for (s, th) in sums.iter_mut().zip(&r.theta) {
            *s += th;
        }
    }
    Ok(sums.into_iter().map(f64::ln_1p).collect())
}

/// Topical volume of `bundle` on topic `t`.
pub fn topical_volume(
    bundle: &EntityPeriodBundle,
    relevances: &BTreeMap<String, ActivityRelevance>,
    t: usize,
) -> Result<f64> {
    let mut docs: Vec<&String> = bundle.documents.iter().collect();
    docs.sort_unstable();
    let mut sum = 0.0;
    for doc in docs {
        let r = relevances
            .get(doc.as_str())
            .ok_or_else(|| Error::Data(format!("no relevance vector for document {doc:?}")))?;
        sum += *r.theta.get(t).ok_or_else(|| {
            Error::Data(format!(
                "topic {t} out of range for relevance of length {}",
                r.theta.len()
            ))
        })?;
    }
    Ok(sum.ln_1p())
}

/// One full-length series per entity; periods without activity are zero
/// vectors.
pub fn build_metric_series(
    bucketing: &Bucketing,
    relevances: &BTreeMap<String, ActivityRelevance>,
    k: usize,
    spec: &PeriodSpec,
) -> Result<BTreeMap<String, MetricSeries>> {
    let mut out = BTreeMap::new();
    for entity in bucketing.entities() {
        let mut vectors = Vec::with_capacity(spec.count);
        for p in 0..spec.count {
            let values = match bucketing.bundles.get(&(entity.clone(), p)) {
                Some(bundle) => bundle_volumes(bundle, relevances, k)?,
                None => vec![0.0; k],
            };
            vectors.push(TopicalMetricVector {
                entity_id: entity.clone(),
                period_index: p,
                values,
            });
        }
        out.insert(
            entity.clone(),
            MetricSeries {
                entity_id: entity,
                vectors,
            },
        );
    }
    Ok(out)
}

/// Manifest of a dense `f64` tensor dump keyed by entity and period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorManifest {
    pub entities: usize,
    pub periods: usize,
    /// Trailing dimensions after `[entity][period]`: `[topics]` for metric
    /// vectors, `[rows, cols]` for frames.
    pub inner_shape: Vec<usize>,
    pub layout: String,
    pub entity_order: Vec<String>,
    pub period_start: usize,
    pub period_end: usize,
    pub dtype: String,
}

/// A `[entity][period][...]` tensor with its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTensor {
    pub manifest: TensorManifest,
    pub data: Vec<f64>,
}

impl MetricTensor {
    pub fn from_series(series: &BTreeMap<String, MetricSeries>) -> Result<Self> {
        let first = series
            .values()
            .next()
            .ok_or_else(|| Error::Data("no metric series to dump".into()))?;
        let periods = first.len();
        let k = first.vectors.first().map_or(0, |v| v.values.len());
        let start = first.vectors.first().map_or(0, |v| v.period_index);
        let mut data = Vec::with_capacity(series.len() * periods * k);
        for s in series.values() {
            if s.len() != periods {
                return Err(Error::shape("metric series length", &[periods], &[s.len()]));
            }
            for v in &s.vectors {
                if v.values.len() != k {
                    return Err(Error::shape("metric vector", &[k], &[v.values.len()]));
                }
                data.extend_from_slice(&v.values);
            }
        }
        Ok(MetricTensor {
            manifest: TensorManifest {
                entities: series.len(),
                periods,
                inner_shape: vec![k],
                layout: "[entity][period][topic]".into(),
                entity_order: series.keys().cloned().collect(),
                period_start: start,
                period_end: start + periods,
                dtype: "f64-le".into(),
            },
            data,
        })
    }

    pub fn to_series(&self) -> Result<BTreeMap<String, MetricSeries>> {
        let m = &self.manifest;
        let [k] = m.inner_shape[..] else {
            return Err(Error::Data(format!(
                "expected [topic] inner shape, got {:?}",
                m.inner_shape
            )));
        };
        let mut out = BTreeMap::new();
        for (e, id) in m.entity_order.iter().enumerate() {
            let vectors = (0..m.periods)
                .map(|p| {
                    let off = (e * m.periods + p) * k;
                    TopicalMetricVector {
                        entity_id: id.clone(),
                        period_index: m.period_start + p,
                        values: self.data[off..off + k].to_vec(),
                    }
                })
                .collect();
            out.insert(
                id.clone(),
                MetricSeries {
                    entity_id: id.clone(),
                    vectors,
                },
            );
        }
        Ok(out)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        write_json(&dir.join("manifest.json"), &self.manifest)?;
        write_f64_le(&dir.join("data.f64"), &self.data)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: TensorManifest = read_json(&dir.join("manifest.json"))?;
        let data = read_f64_le(&dir.join("data.f64"))?;
        let expected =
            manifest.entities * manifest.periods * manifest.inner_shape.iter().product::<usize>();
        if data.len() != expected || manifest.entity_order.len() != manifest.entities {
            return Err(Error::Data(format!(
                "tensor dump {} holds {} values, manifest implies {}",
                dir.display(),
                data.len(),
                expected
            )));
        }
        Ok(MetricTensor { manifest, data })
    }
}
