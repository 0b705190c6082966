use std::fmt::Write as _;

use super::autoencoder::Autoencoder;
use super::fid::{fid, fit_gaussian};
use super::report::geodesic_report;
use crate::error::{Error, Result};
use crate::inpainter::{Inpainter, InpainterMode};
use crate::motion::blend::window_start;
use crate::motion::{linear_blend, MotionClip};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Blending,
    Inpainter,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Blending => "blending",
            Method::Inpainter => "inpainter",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub method: Method,
    pub window: usize,
    /// Mean masked-region geodesic over the cases.
    pub geodesic: f64,
    pub fid: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub mode: InpainterMode,
    pub geodesic: f64,
}

fn check_cases(cases: &[MotionClip]) -> Result<usize> {
    let first = cases.first().ok_or_else(|| Error::Data("no evaluation cases".into()))?;
    let n = first.len();
    if let Some(c) = cases.iter().find(|c| c.len() != n) {
        return Err(Error::dim("case length", n, c.len()));
    }
    Ok(n)
}

fn masked_mean(outputs: &[MotionClip], cases: &[MotionClip], window: usize) -> Result<f64> {
    let n = cases[0].len();
    let start = window_start(n / 2, window);
    let mut total = 0.0;
    for (o, c) in outputs.iter().zip(cases) {
        total += geodesic_report(o, c, start..start + window)?;
    }
    Ok(total / cases.len() as f64)
}

fn inpaint_all(model: &Inpainter, cases: &[MotionClip], window: usize) -> Result<Vec<MotionClip>> {
    if model.config.window != window {
        return Err(Error::param(
            "window",
            format!("model masks {} frames, sweep asked for {window}", model.config.window),
        ));
    }
    cases.iter().map(|c| model.inpaint(c)).collect()
}

/// Blending and the inpainter at each window on junction-centred `cases`.
/// `train` supplies an inpainter masking the given window.
pub fn window_sweep<F>(cases: &[MotionClip], ae: &Autoencoder, windows: &[usize], mut train: F) -> Result<Vec<SweepRow>>
where
    F: FnMut(usize) -> Result<Inpainter>,
{
    let n = check_cases(cases)?;
    let real = fit_gaussian(&ae.features(cases)?)?;
    let mut rows = Vec::with_capacity(2 * windows.len());
    for &w in windows {
        let blended = cases
            .iter()
            .map(|c| linear_blend(&c.slice(0, n / 2)?, &c.slice(n / 2, n)?, w))
            .collect::<Result<Vec<_>>>()?;
        let model = train(w)?;
        let inpainted = inpaint_all(&model, cases, w)?;
        for (method, outputs) in [(Method::Blending, blended), (Method::Inpainter, inpainted)] {
            let gen = fit_gaussian(&ae.features(&outputs)?)?;
            rows.push(SweepRow {
                method,
                window: w,
                geodesic: masked_mean(&outputs, cases, w)?,
                fid: fid(&real, &gen)?,
            });
        }
    }
    Ok(rows)
}

/// Masked-region geodesic of an inpainter trained under each `mode`.
pub fn ablation<F>(cases: &[MotionClip], window: usize, modes: &[InpainterMode], mut train: F) -> Result<Vec<AblationRow>>
where
    F: FnMut(InpainterMode) -> Result<Inpainter>,
{
    check_cases(cases)?;
    let mut rows = Vec::with_capacity(modes.len());
    for &mode in modes {
        let model = train(mode)?;
        let outputs = inpaint_all(&model, cases, window)?;
        rows.push(AblationRow {
            mode,
            geodesic: masked_mean(&outputs, cases, window)?,
        });
    }
    Ok(rows)
}

/// Tab-separated `method window geodesic fid` table with a header line.
pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut s = String::from("method\twindow\tgeodesic\tfid\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{:.6e}\t{:.6e}", r.method.name(), r.window, r.geodesic, r.fid);
    }
    s
}

/// Window whose inpainter row has the lowest FID, and whether it lies strictly
/// inside the swept range.
pub fn fid_minimum(rows: &[SweepRow]) -> Option<(usize, bool)> {
    let ours: Vec<&SweepRow> = rows.iter().filter(|r| r.method == Method::Inpainter).collect();
    let best = ours.iter().min_by(|a, b| a.fid.total_cmp(&b.fid))?;
    let lo = ours.iter().map(|r| r.window).min()?;
    let hi = ours.iter().map(|r| r.window).max()?;
    Some((best.window, best.window > lo && best.window < hi))
}
