//! CSV reports and training logs.
//!
//! The clip report has the header
//! `clip,frames,psnr_mean,ssim_mean,warp_error_mean,profile`, one row per
//! clip in input order, then a row whose clip field is `mean` holding the
//! unweighted mean over clips (`n/a` in every metric column when there are
//! no clips). Reals are written in shortest round-trip form.

use std::fmt::Write as _;
use std::path::Path;

use vsrkit_core::metrics::ClipReport;
use vsrkit_core::sosr::SosrLogRow;
use vsrkit_core::tosr::TosrLogRow;

use crate::error::{self, Error, Result};

pub const REPORT_HEADER: &str = "clip,frames,psnr_mean,ssim_mean,warp_error_mean,profile";
pub const FRAMES_HEADER: &str = "clip,frame,psnr,ssim,warp_error";
pub const SOSR_LOG_HEADER: &str = "iteration,wmse,feature,adv_g,adv_d,total";
pub const TOSR_LOG_HEADER: &str = "iteration,l_sr,l_warp_sr,l_warp_hr,total,lr";

/// One parsed data row of a clip report.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub clip: String,
    pub frames: Option<usize>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub warp_error: Option<f64>,
    pub profile: String,
}

fn check_field(s: &str) -> Result<&str> {
    if s.contains([',', '\n', '\r']) {
        return Err(Error::Validation(format!("report field `{s}` contains a separator")));
    }
    Ok(s)
}

pub fn report_csv(reports: &[ClipReport]) -> Result<String> {
    let mut s = String::new();
    writeln!(s, "{REPORT_HEADER}").unwrap();
    for r in reports {
        let profile = r.profile.as_deref().map(check_field).transpose()?.unwrap_or("");
        writeln!(s, "{},{},{},{},{},{}", check_field(&r.clip)?, r.psnr.len(), r.mean_psnr(), r.mean_ssim(), r.mean_warp_error, profile).unwrap();
    }
    if reports.is_empty() {
        writeln!(s, "mean,n/a,n/a,n/a,n/a,").unwrap();
    } else {
        let n = reports.len() as f64;
        let mean = |f: &dyn Fn(&ClipReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let frames = reports.iter().map(|r| r.psnr.len()).sum::<usize>();
        writeln!(s, "mean,{frames},{},{},{},", mean(&|r| r.mean_psnr()), mean(&|r| r.mean_ssim()), mean(&|r| r.mean_warp_error)).unwrap();
    }
    Ok(s)
}

/// Per-frame rows; the warp error of frame `t` is that of the pair `(t, t+1)`,
/// left empty for the last frame.
pub fn frames_csv(reports: &[ClipReport]) -> Result<String> {
    let mut s = String::new();
    writeln!(s, "{FRAMES_HEADER}").unwrap();
    for r in reports {
        let clip = check_field(&r.clip)?;
        for (t, (p, q)) in r.psnr.iter().zip(&r.ssim).enumerate() {
            let w = r.warp_error.get(t).map(|w| w.to_string()).unwrap_or_default();
            writeln!(s, "{clip},{t},{p},{q},{w}").unwrap();
        }
    }
    Ok(s)
}

pub fn emit_report(reports: &[ClipReport], path: &Path) -> Result<()> {
    error::write(path, report_csv(reports)?.as_bytes())
}

pub fn parse_report(text: &str) -> std::result::Result<Vec<ReportRow>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_HEADER) {
        return Err("missing report header".into());
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(format!("expected 6 fields in `{line}`"));
            }
            let real = |s: &str| -> std::result::Result<Option<f64>, String> {
                if s == "n/a" { Ok(None) } else { s.parse().map(Some).map_err(|_| format!("bad number `{s}`")) }
            };
            let frames = if f[1] == "n/a" { None } else { Some(f[1].parse().map_err(|_| format!("bad count `{}`", f[1]))?) };
            Ok(ReportRow { clip: f[0].into(), frames, psnr: real(f[2])?, ssim: real(f[3])?, warp_error: real(f[4])?, profile: f[5].into() })
        })
        .collect()
}

pub fn sosr_log_csv(rows: &[SosrLogRow]) -> String {
    let mut s = format!("{SOSR_LOG_HEADER}\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{},{}", r.iteration, r.wmse, r.feature, r.adv_g, r.adv_d, r.total).unwrap();
    }
    s
}

pub fn tosr_log_csv(rows: &[TosrLogRow]) -> String {
    let mut s = format!("{TOSR_LOG_HEADER}\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{},{}", r.iteration, r.l_sr, r.l_warp_sr, r.l_warp_hr, r.total, r.lr).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(name: &str, psnr: Vec<f64>, warp: Vec<f64>) -> ClipReport {
        let mean = warp.iter().sum::<f64>() / warp.len() as f64;
        ClipReport { clip: name.into(), ssim: vec![0.5; psnr.len()], psnr, warp_error: warp, mean_warp_error: mean, profile: None }
    }

    #[test]
    fn empty_report_has_na_mean_row() {
        assert_eq!(report_csv(&[]).unwrap(), format!("{REPORT_HEADER}\nmean,n/a,n/a,n/a,n/a,\n"));
        let rows = parse_report(&report_csv(&[]).unwrap()).unwrap();
        assert_eq!(rows[0].psnr, None);
    }

    #[test]
    fn singleton_mean_row_equals_clip_row() {
        let text = report_csv(&[clip("a", vec![30.0, 31.5], vec![0.01])]).unwrap();
        let rows = parse_report(&text).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].psnr, rows[0].ssim, rows[0].warp_error), (rows[1].psnr, rows[1].ssim, rows[1].warp_error));
        assert_eq!(rows[1].clip, "mean");
    }

    #[test]
    fn parse_back_reproduces_values() {
        let reports = [clip("a", vec![30.123456789, 29.0], vec![1.0 / 3.0]), clip("b", vec![41.0; 3], vec![2e-7, 3e-7])];
        let rows = parse_report(&report_csv(&reports).unwrap()).unwrap();
        for (r, row) in reports.iter().zip(&rows) {
            let close = |a: f64, b: f64| ((a - b) / a).abs() < 5e-6;
            assert!(close(row.psnr.unwrap(), r.mean_psnr()));
            assert!(close(row.warp_error.unwrap(), r.mean_warp_error));
            assert_eq!(row.frames, Some(r.psnr.len()));
        }
        let mean = &rows[2];
        assert!((mean.psnr.unwrap() - (29.5617283945 + 41.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn separators_in_names_rejected() {
        assert!(report_csv(&[clip("a,b", vec![1.0], vec![])]).is_err());
    }
}
