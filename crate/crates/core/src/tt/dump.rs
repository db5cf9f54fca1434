//! Human-readable structure dump: one header line, then one line per core.

use super::{TtMatrix, TtTensor};
use core::fmt;

impl fmt::Display for TtTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "tt_tensor d={} modes={:?} ranks={:?} r_eff={:.4}",
            self.dim(),
            self.shape().modes(),
            self.ranks(),
            self.effective_rank()
        )?;
        for (k, c) in self.cores().iter().enumerate() {
            writeln!(f, "  core {k}: {} x {} x {}", c.left(), c.mode(), c.right())?;
        }
        Ok(())
    }
}

impl fmt::Display for TtMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "tt_matrix d={} rows={:?} cols={:?} ranks={:?} r_eff={:.4}",
            self.dim(),
            self.rows().modes(),
            self.cols().modes(),
            self.ranks(),
            self.effective_rank()
        )?;
        for (k, c) in self.tt().cores().iter().enumerate() {
            writeln!(
                f,
                "  core {k}: {} x {} x {} x {}",
                c.left(),
                self.rows().modes()[k],
                self.cols().modes()[k],
                c.right()
            )?;
        }
        Ok(())
    }
}
