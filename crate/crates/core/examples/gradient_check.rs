//! Verifies reverse-mode gradients against central finite differences: a
//! hand-written program on the tape, then the built-in self-test suite.

use cosprune::experiment::run_selftest;
use cosprune::gradcheck::grad_check;
use cosprune::Tensor;

fn main() -> anyhow::Result<()> {
    // f(x) = Σ relu(x) · x² , smooth away from 0
    let x = Tensor::from_f64(&[5], &[0.7, -1.3, 2.1, 0.05, -0.4])?;
    let err = grad_check(
        |t, v| {
            let r = t.relu(v);
            let sq = t.mul(v, v)?;
            let p = t.mul(r, sq)?;
            Ok(t.sum(p))
        },
        &x,
        1e-6,
    )?;
    println!("custom program: max rel err {err:.2e}\n");

    let checks = run_selftest(0)?;
    for c in &checks {
        println!("[{}] {:<34} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    anyhow::ensure!(checks.iter().all(|c| c.passed), "self-test failed");
    Ok(())
}
