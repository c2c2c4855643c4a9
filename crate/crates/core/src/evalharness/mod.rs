//! Evaluation harness for the authentication pipeline.
//!
//! - Threshold metrics (TAR/TRR/FAR/FRR/BAC) from confusion counts
//! - ROC curves with trapezoidal AUC and interpolated EER
//! - Per-user k-fold cross-validation against an all-other-users impostor
//!   pool
//! - Attack-trial aggregation with Gaussian KDE score densities
//! - Wall-clock latency breakdown of the verification stages
//! - Report serialization: JSON, CSV tables, and SVG plots
//!
//! Everything here consumes plain score lists or feature matrices, so the
//! harness is independent of how features were produced.

mod metrics;
pub mod plot;
mod protocol;

use std::fmt::Write;

use serde::{Deserialize, Serialize};

pub use metrics::{confusion, gaussian_kde, pairwise_auc, roc, ConfusionCounts, GaussianKde, RocCurve};
pub use protocol::{
    attack_eval, cross_validate, cross_validate_detailed, measure_latency, AttackKind, AttackRow,
    AttackTrial, CrossValReport, LatencyBreakdown, MetricSummary, UserEval,
};

use crate::oneclass::ClassifierKind;

/// Full results of one synthetic-population study: cross-validated
/// verification quality, attack outcomes, and optional latency figures,
/// together with the settings needed to reproduce the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    /// Seed the whole study was derived from.
    pub seed: u64,
    /// Classifier used for enrollment.
    pub classifier: ClassifierKind,
    /// Number of synthetic subjects.
    pub subjects: usize,
    /// Verification trials rendered per subject.
    pub trials_per_subject: usize,
    /// Cross-validation outcome (per-user rows plus summaries).
    pub cv: CrossValReport,
    /// Attack rows, one per attack kind evaluated.
    pub attacks: Vec<AttackRow>,
    /// Stage latency means, when measured.
    pub latency: Option<LatencyBreakdown>,
}

impl StudyReport {
    /// Pretty JSON encoding; identical inputs give identical bytes.
    pub fn to_json(&self) -> crate::Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-user metric table with mean/std footer rows.
    pub fn per_user_csv(&self) -> String {
        let mut out = String::from("user,tar,trr,far,frr,bac,auc,eer\n");
        for e in &self.cv.per_user {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                e.user, e.tar, e.trr, e.far, e.frr, e.bac, e.auc, e.eer
            );
        }
        let _ = writeln!(
            out,
            "mean,,,,,{:.6},{:.6},{:.6}",
            self.cv.bac.mean, self.cv.auc.mean, self.cv.eer.mean
        );
        let _ = writeln!(
            out,
            "std,,,,,{:.6},{:.6},{:.6}",
            self.cv.bac.std, self.cv.auc.std, self.cv.eer.std
        );
        out
    }

    /// Attack outcome table.
    pub fn attacks_csv(&self) -> String {
        let mut out = String::from("attack,attempts,bypassed,far,mean_score\n");
        for row in &self.attacks {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6}",
                row.kind, row.attempts, row.bypassed, row.far, row.mean_score
            );
        }
        out
    }

    /// Latency table (empty string when latency was not measured).
    pub fn latency_csv(&self) -> String {
        let Some(lat) = &self.latency else {
            return String::new();
        };
        format!(
            "stage,mean_ms\npreprocess,{:.4}\nfeature_extraction,{:.4}\nclassification,{:.4}\ntotal,{:.4}\n",
            lat.preprocess_ms,
            lat.extract_ms,
            lat.classify_ms,
            lat.total_ms()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_report() -> StudyReport {
        let per_user = vec![
            UserEval {
                user: "user00".into(),
                tar: 0.95,
                trr: 0.99,
                far: 0.01,
                frr: 0.05,
                bac: 0.97,
                auc: 0.995,
                eer: 0.02,
            },
            UserEval {
                user: "user01".into(),
                tar: 0.91,
                trr: 0.97,
                far: 0.03,
                frr: 0.09,
                bac: 0.94,
                auc: 0.98,
                eer: 0.05,
            },
        ];
        let summarize = |vals: [f64; 2]| {
            let mean = 0.5 * (vals[0] + vals[1]);
            let std =
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1.0).sqrt();
            MetricSummary { mean, std }
        };
        StudyReport {
            seed: 42,
            classifier: ClassifierKind::Ocsvm,
            subjects: 2,
            trials_per_subject: 20,
            cv: CrossValReport {
                folds: 5,
                bac: summarize([0.97, 0.94]),
                auc: summarize([0.995, 0.98]),
                eer: summarize([0.02, 0.05]),
                per_user,
            },
            attacks: vec![AttackRow {
                kind: AttackKind::ZeroEffort,
                attempts: 40,
                bypassed: 2,
                far: 0.05,
                mean_score: -0.4,
                kde: gaussian_kde(&[-0.5, -0.4, -0.3, -0.4]).unwrap(),
            }],
            latency: Some(LatencyBreakdown {
                runs: 50,
                preprocess_ms: 1.5,
                extract_ms: 4.0,
                classify_ms: 0.2,
            }),
        }
    }

    #[test]
    fn report_json_roundtrips_and_is_stable() {
        let report = toy_report();
        let json = report.to_json().unwrap();
        assert_eq!(json, report.to_json().unwrap());
        let back: StudyReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_json().unwrap(), json);
        assert_eq!(back.cv.per_user.len(), 2);
        assert_eq!(back.classifier, ClassifierKind::Ocsvm);
    }

    #[test]
    fn summaries_are_recomputable_from_per_user_rows() {
        let report = toy_report();
        let n = report.cv.per_user.len() as f64;
        let mean = report.cv.per_user.iter().map(|e| e.bac).sum::<f64>() / n;
        assert!((report.cv.bac.mean - mean).abs() < 1e-12);
        let var = report
            .cv
            .per_user
            .iter()
            .map(|e| (e.bac - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        assert!((report.cv.bac.std - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn csv_tables_have_the_expected_shape() {
        let report = toy_report();
        let user_csv = report.per_user_csv();
        let users: Vec<&str> = user_csv.lines().collect();
        assert_eq!(users.len(), 1 + 2 + 2, "header + per-user + mean/std");
        assert!(users[0].starts_with("user,tar,trr"));
        assert!(users[3].starts_with("mean,"));
        assert!(users[4].starts_with("std,"));

        let attack_csv = report.attacks_csv();
        let attacks: Vec<&str> = attack_csv.lines().collect();
        assert_eq!(attacks.len(), 2);
        assert!(attacks[1].starts_with("zero_effort,40,2,"));

        let latency = report.latency_csv();
        assert!(latency.contains("feature_extraction,4.0000"));
        assert!(latency.contains("total,5.7000"));
        let mut no_latency = report.clone();
        no_latency.latency = None;
        assert!(no_latency.latency_csv().is_empty());
    }
}
