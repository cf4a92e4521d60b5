mod support {
    pub mod gradient_cases;
}

use support::gradient_cases::{run_all, suites, CASES};

#[test]
fn every_op_and_loss_matches_central_differences() {
    let started = std::time::Instant::now();
    match run_all() {
        Ok(s) => {
            assert_eq!(s.cases, suites().len() * CASES);
            println!(
                "{} suites x {CASES} cases, {} probes, {} on kinks, {:.1}s",
                suites().len(),
                s.probes,
                s.kinks,
                started.elapsed().as_secs_f64()
            );
        }
        Err(failures) => panic!("{} failing cases:\n{}", failures.len(), failures.join("\n")),
    }
}
