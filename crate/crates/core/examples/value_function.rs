//! Closed-form dual value for power utility and its PDE residual.

use volfilter::dual_value::{pde_residual, phi_eval, solve_value_coeffs_logou, CoefficientForm, YField};
use volfilter::{ModelParams, TimeGrid};

fn main() -> volfilter::Result<()> {
    let params = ModelParams::canonical_log_ou();
    let field = YField::stationary(&params)?;
    let grid = TimeGrid::new(0.0, 1.0, 1000)?;
    let p = 0.5;

    for form in [CoefficientForm::Consistent, CoefficientForm::Printed] {
        let c = solve_value_coeffs_logou(&field, p, &grid, form)?;
        let ([at, bt, ab, bb, cb], _) = c.at(0.0)?;
        let (phi0, dphi) = phi_eval(&c, 0.0, params.v0, params.m0)?;
        let res = pde_residual(&c, &field, (0.5, params.v0, params.m0), 1e-4, p)?;
        println!("{form:?}: A~={at:.6} B~={bt:.6} A-={ab:.6} B-={bb:.6} C-={cb:.6}");
        println!("    phi(0,Y0)={phi0:.6}  Dphi=({:.4}, {:.4})  PDE residual {res:.2e}", dphi[0], dphi[1]);
    }
    Ok(())
}
