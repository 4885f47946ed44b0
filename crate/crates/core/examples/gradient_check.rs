//! Finite-difference check of every parameter group of a small model, with
//! and without a deliberately broken kernel gradient.

use relconv::autodiff::Fault;
use relconv::cli::{gradcheck_from, gradcheck_table};
use relconv::gradcheck::GradcheckOptions;

fn main() -> relconv::Result<()> {
    for fault in [None, Some(Fault::FlipConvKernelGrad)] {
        let options = GradcheckOptions {
            fault,
            ..GradcheckOptions::default()
        };
        let (seed, report) = gradcheck_from(0, &options)?.expect("a stable seed");
        println!("fault {fault:?}");
        print!("{}", gradcheck_table(seed, &report));
        println!("passed: {}\n", report.passed());
    }
    Ok(())
}
