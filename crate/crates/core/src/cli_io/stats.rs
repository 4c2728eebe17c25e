//! Activation statistics dump: per-site histograms over the observed range
//! and per-image Φ rows, for plotting outlier structure externally.

use crate::error::{Error, Result};
use crate::model::{site_kind, RestorationNet};
use crate::quant::compute_stats;
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::path::Path;

pub const HIST_BINS: usize = 256;
pub const HIST_FILE: &str = "histogram.csv";
pub const PHI_FILE: &str = "phi.csv";

/// `all` or `*` selects every site; otherwise a site matches by full name,
/// by dotted prefix (`body.0`) or by kind (`ss2d.scan_in`).
pub fn select_sites(net: &RestorationNet, selector: &str) -> Result<Vec<String>> {
    let sites = net.all_sites();
    let hit = |s: &str| {
        selector == "all"
            || selector == "*"
            || s == selector
            || s.strip_prefix(selector).is_some_and(|rest| rest.starts_with('.'))
            || site_kind(s) == selector
    };
    let picked: Vec<String> = sites.iter().filter(|s| hit(s)).cloned().collect();
    if picked.is_empty() {
        return Err(Error::Config(format!(
            "selector {selector:?} matches no activation site; available: {}",
            sites.join(", ")
        )));
    }
    Ok(picked)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistRow {
    pub site: String,
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhiRow {
    pub site: String,
    pub image: String,
    pub count: usize,
    pub mu: f64,
    pub sigma: f64,
    pub x_min: f64,
    pub x_max: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StatsDump {
    pub histograms: Vec<HistRow>,
    pub phi: Vec<PhiRow>,
}

/// `HIST_BINS` equal bins over `[min, max]`, the top edge closed; a single
/// bin when the range is degenerate.
pub fn histogram(site: &str, values: &[f64]) -> Vec<HistRow> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || lo == hi {
        return vec![HistRow {
            site: site.into(),
            bin: 0,
            lo,
            hi,
            count: values.len() as u64,
        }];
    }
    let width = (hi - lo) / HIST_BINS as f64;
    let mut counts = vec![0u64; HIST_BINS];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(HIST_BINS - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, count)| HistRow {
            site: site.into(),
            bin: b,
            lo: lo + b as f64 * width,
            hi: if b + 1 == HIST_BINS { hi } else { lo + (b + 1) as f64 * width },
            count,
        })
        .collect()
}

pub type Hook<'h> = dyn FnMut(&str, &Tensor) -> Option<Tensor> + 'h;

/// Runs every image through the network and records the selected sites.
/// `hook`, when given, may replace a site's value before it is recorded
/// and before the quantizer sees it.
pub fn collect_stats(
    net: &RestorationNet,
    images: &[(String, Tensor)],
    selector: &str,
    mut hook: Option<&mut Hook<'_>>,
) -> Result<StatsDump> {
    let sites = select_sites(net, selector)?;
    let mut values: BTreeMap<String, Vec<f64>> = sites.iter().map(|s| (s.clone(), Vec::new())).collect();
    let mut dump = StatsDump::default();
    for (name, img) in images {
        let mut seen: Vec<(String, Tensor)> = Vec::new();
        {
            let mut obs = |site: &str, x: &Tensor| {
                let replaced = hook.as_mut().and_then(|h| h(site, x));
                if values.contains_key(site) {
                    seen.push((site.to_string(), replaced.clone().unwrap_or_else(|| x.clone())));
                }
                replaced
            };
            net.infer_observed(img, Some(&mut obs))?;
        }
        for (site, x) in seen {
            let (phi, _) = compute_stats(&x)?;
            dump.phi.push(PhiRow {
                site: site.clone(),
                image: name.clone(),
                count: x.numel(),
                mu: phi.mu,
                sigma: phi.sigma,
                x_min: phi.xmin,
                x_max: phi.xmax,
            });
            values.get_mut(&site).expect("selected").extend_from_slice(x.data());
        }
    }
    for site in &sites {
        dump.histograms.extend(histogram(site, &values[site]));
    }
    Ok(dump)
}

impl StatsDump {
    /// Writes `histogram.csv` and `phi.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join(HIST_FILE))?;
        w.write_record(["site", "bin", "lo", "hi", "count"])?;
        for r in &self.histograms {
            w.write_record([r.site.clone(), r.bin.to_string(), format!("{:e}", r.lo), format!("{:e}", r.hi), r.count.to_string()])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join(PHI_FILE))?;
        w.write_record(["site", "image", "count", "mu", "sigma", "x_min", "x_max"])?;
        for r in &self.phi {
            w.write_record([
                r.site.clone(),
                r.image.clone(),
                r.count.to_string(),
                format!("{:e}", r.mu),
                format!("{:e}", r.sigma),
                format!("{:e}", r.x_min),
                format!("{:e}", r.x_max),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
