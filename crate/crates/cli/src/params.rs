use std::collections::BTreeMap;

use anyhow::{anyhow, bail, Context, Result};
use xfermetric::distance::{DistanceParams, GroundCost};
use xfermetric::metrics::Hyperparameters;

use crate::KnnArgs;

/// Splits `id.name=value`.
pub fn parse_param(raw: &str) -> Result<(String, String, f64)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| anyhow!("parameter {raw:?} is not of the form id.name=value"))?;
    let (id, name) = key
        .split_once('.')
        .ok_or_else(|| anyhow!("parameter {raw:?} is not of the form id.name=value"))?;
    let value: f64 = value
        .trim()
        .parse()
        .with_context(|| format!("parameter {raw:?} has a non-numeric value"))?;
    Ok((id.trim().to_string(), name.trim().to_string(), value))
}

pub fn metric_overrides(raw: &[String], knn: Option<&KnnArgs>) -> Result<BTreeMap<String, Hyperparameters>> {
    let mut out: BTreeMap<String, Hyperparameters> = BTreeMap::new();
    for p in raw {
        let (id, name, value) = parse_param(p)?;
        out.entry(id).or_default().insert(name, value);
    }
    if let Some(knn) = knn {
        let mut set = |name: &str, value: f64| {
            out.entry("knn".into()).or_default().insert(name.into(), value);
        };
        if let Some(k) = knn.k {
            set("k", k as f64);
        }
        if let Some(f) = knn.split_fraction {
            set("fraction", f);
        }
        if knn.cv3 {
            set("cv3", 1.0);
        }
        if knn.no_stratify {
            set("stratified", 0.0);
        }
    }
    Ok(out)
}

fn count(id: &str, name: &str, value: f64) -> Result<usize> {
    if !(value >= 0.0 && value.fract() == 0.0 && value.is_finite()) {
        bail!("{id}.{name} must be a non-negative integer, got {value}");
    }
    Ok(value as usize)
}

pub fn distance_params(raw: &[String], emd_cost: &str) -> Result<DistanceParams> {
    let mut p = DistanceParams {
        emd_cost: match emd_cost {
            "cosine" => GroundCost::Cosine,
            _ => GroundCost::Euclidean,
        },
        ..DistanceParams::default()
    };
    for r in raw {
        let (id, name, v) = parse_param(r)?;
        match (id.as_str(), name.as_str()) {
            ("fid", "eps") => p.fid_eps = v,
            ("kid", "degree") => p.kid.degree = count(&id, &name, v)? as i32,
            ("kid", "blocks") => p.kid.blocks = count(&id, &name, v)?,
            ("kid", "block_size") => p.kid.block_size = Some(count(&id, &name, v)?),
            ("ids", "sample_cap") => p.ids_cap = count(&id, &name, v)?,
            ("imd", "sample_cap") => p.imd.sample_cap = count(&id, &name, v)?,
            ("imd", "graph_k") => p.imd.heat.graph_k = count(&id, &name, v)?,
            ("imd", "probes") => p.imd.heat.probes = count(&id, &name, v)?,
            ("imd", "lanczos_steps") => p.imd.heat.lanczos_steps = count(&id, &name, v)?,
            _ => bail!("unknown distance parameter {id}.{name}"),
        }
    }
    Ok(p)
}
