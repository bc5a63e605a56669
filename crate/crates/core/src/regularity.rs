//! Diagnostic check of the discrete-interior-smooth conditions that make
//! every induced environment strongly regular almost everywhere.

use std::fmt;

use crate::certainty::CertaintyEquivalent;
use crate::setting::Setting;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Warn,
    Fail,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Warn => "WARN",
            Status::Fail => "FAIL",
        })
    }
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct RegularityReport {
    pub checks: Vec<Check>,
}

impl RegularityReport {
    /// Every condition holds, so strong regularity obtains almost everywhere.
    pub fn strongly_regular(&self) -> bool {
        self.checks.iter().all(|c| c.status == Status::Pass)
    }

    pub fn status(&self, name: &str) -> Option<Status> {
        self.checks.iter().find(|c| c.name == name).map(|c| c.status)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.status != Status::Pass)
    }
}

impl fmt::Display for RegularityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {}: {}", c.status, c.name, c.detail)?;
        }
        write!(
            f,
            "strongly regular (a.e.): {}",
            if self.strongly_regular() { "yes" } else { "no" }
        )
    }
}

struct Builder(Vec<Check>);

impl Builder {
    fn push(&mut self, name: &'static str, status: Status, detail: impl Into<String>) {
        self.0.push(Check {
            name,
            status,
            detail: detail.into(),
        });
    }

    fn pass_or(&mut self, name: &'static str, ok: bool, bad: Status, detail: impl Into<String>) {
        let status = if ok { Status::Pass } else { bad };
        let detail = if ok { "ok".to_string() } else { detail.into() };
        self.push(name, status, detail);
    }
}

/// Runs every check; never fails.
pub fn validate_setting(s: &Setting) -> RegularityReport {
    let mut b = Builder(Vec::new());

    match s.validate() {
        Ok(()) => b.push("well-formed", Status::Pass, "ok"),
        Err(e) => b.push("well-formed", Status::Fail, e.to_string()),
    }

    // finite outcome lists are the only representation, so discreteness holds
    // by construction
    b.push("discrete states", Status::Pass, "finite outcome sets");
    b.push("discrete portfolios", Status::Pass, "finite portfolio sets");

    let mut smooth = Ok(());
    let mut inada = true;
    let mut origin = true;
    for (t, p) in s.periods.iter().enumerate() {
        if smooth.is_ok() {
            smooth = p
                .aggregator
                .check_invariants()
                .map_err(|e| format!("period {t}: {e}"));
        }
        inada &= p.aggregator.has_inada();
        origin &= p.aggregator.value(0.0, 0.0) == 0.0;
    }
    match smooth {
        Ok(()) => b.push("aggregator smooth and increasing", Status::Pass, "ok"),
        Err(e) => b.push("aggregator smooth and increasing", Status::Fail, e),
    }
    b.pass_or(
        "Inada conditions",
        inada,
        Status::Warn,
        "an aggregator does not declare Inada conditions; interior consumption is not guaranteed",
    );
    b.pass_or("f(0,0) = 0", origin, Status::Fail, "aggregator is not normalised at the origin");
    b.pass_or(
        "u_T(0) = 0",
        s.terminal.intercept == 0.0,
        Status::Fail,
        format!("terminal utility at zero is {}", s.terminal.intercept),
    );

    let mut ce_zero = true;
    let mut ce_smooth = true;
    for p in &s.periods {
        let zeros = vec![0.0; p.states.len()];
        ce_zero &= matches!(p.ce.eval(&zeros, &p.states.probs), Ok(x) if x == 0.0);
        ce_smooth &= !matches!(p.ce, CertaintyEquivalent::MultiPrior { .. });
    }
    b.pass_or("M(0) = 0", ce_zero, Status::Fail, "certainty equivalent is not normalised");
    b.pass_or(
        "certainty equivalent smooth",
        ce_smooth,
        Status::Warn,
        "multi-prior certainty equivalents are only piecewise smooth at prior switches",
    );
    b.pass_or(
        "W(0, theta) = 0",
        s.income.is_none(),
        Status::Warn,
        "labour income keeps next-period wealth positive at zero savings",
    );

    RegularityReport { checks: b.0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregator::{Aggregator, CustomAggregator, Partials};
    use crate::setting::{Period, Portfolio, StateSpace, TerminalUtility};

    fn base() -> Setting {
        Setting::stationary(
            3,
            Period {
                aggregator: Aggregator::epstein_zin(0.9, 1.5).unwrap(),
                ce: CertaintyEquivalent::crra(4.0),
                states: StateSpace::uniform(2),
                portfolios: vec![
                    Portfolio::riskless("bond", 1.02, 2),
                    Portfolio::new("stock", vec![0.9, 1.25]),
                ],
            },
            TerminalUtility::linear(1.0),
        )
    }

    #[test]
    fn standard_setting_is_strongly_regular() {
        let r = validate_setting(&base());
        assert!(r.strongly_regular(), "{r}");
    }

    #[test]
    fn terminal_intercept_flagged() {
        let mut s = base();
        s.terminal.intercept = 1.0;
        let r = validate_setting(&s);
        assert_eq!(r.status("u_T(0) = 0"), Some(Status::Fail));
        assert!(!r.strongly_regular());
    }

    #[derive(Debug)]
    struct NoInada;

    impl CustomAggregator for NoInada {
        fn name(&self) -> String {
            "linear".into()
        }
        fn value(&self, c: f64, v: f64) -> f64 {
            0.5 * c + 0.5 * v
        }
        fn partials(&self, c: f64, v: f64) -> Partials {
            Partials {
                f: self.value(c, v),
                fc: 0.5,
                fv: 0.5,
                fcc: 0.0,
                fcv: 0.0,
                fvv: 0.0,
            }
        }
        fn homogeneous_degree_one(&self) -> bool {
            true
        }
        fn inada(&self) -> bool {
            false
        }
    }

    #[test]
    fn missing_inada_is_a_warning() {
        let mut s = base();
        for p in &mut s.periods {
            p.aggregator = Aggregator::custom(NoInada);
        }
        let r = validate_setting(&s);
        assert_eq!(r.status("Inada conditions"), Some(Status::Warn));
    }
}
