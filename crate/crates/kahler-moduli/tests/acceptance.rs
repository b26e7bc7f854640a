//! Acceptance suite at the pinned tolerances, one line per criterion.
//!
//! Runs without the test harness so the lines are always printed. The
//! process fails when a criterion breaks down numerically or fails without
//! being listed in `KNOWN_RED`; listed criteria are reported as failing, with
//! their measurements, and never loosened.

use kahler_moduli::cli::config::RunConfig;
use kahler_moduli::cli::verify::verify;

/// Criteria that fail at the pinned tolerances, with the reason.
const KNOWN_RED: [(usize, &str); 1] = [(
    7,
    "the transcribed Hessian defect tends to a nonzero limit (about 1e-2) instead of decreasing; \
     the audit variant metric.4[minus_mu_derivative] brings it to round-off",
)];

fn main() {
    let start = std::time::Instant::now();
    let report = verify(&RunConfig::default());
    let mut unexpected = Vec::new();
    for c in &report.criteria {
        println!("{}", c.line());
        if !c.passed {
            match KNOWN_RED.iter().find(|(id, _)| *id == c.id) {
                Some((_, why)) if !c.note.starts_with("breakdown") => println!("     known red: {why}"),
                _ => unexpected.push(c.id),
            }
        }
    }
    let passed = report.criteria.iter().filter(|c| c.passed).count();
    println!("acceptance: {passed}/{} criteria pass ({:.0} s)", report.criteria.len(), start.elapsed().as_secs_f64());
    for (id, _) in KNOWN_RED {
        if report.criteria.iter().any(|c| c.id == id && c.passed) {
            println!("note: criterion {id} now passes; remove it from KNOWN_RED");
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
