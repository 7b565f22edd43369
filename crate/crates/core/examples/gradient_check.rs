//! Finite-difference checks of every layer and of the whole network, plus
//! the protocol identities: the same list `irs-cdrn selftest` prints.

use irs_cdrn::selftest::run_selftest;

fn main() -> irs_cdrn::Result<()> {
    let checks = run_selftest(1)?;
    for c in &checks {
        println!(
            "{:<30} {:.3e}  bound {:.0e}  {}",
            c.name,
            c.value,
            c.bound,
            if c.passed() { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
