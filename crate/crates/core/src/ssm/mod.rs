//! Selective state-space scan and the Mamba blocks built around it.

mod classical;
mod mamba_kan;
mod scan;

pub use classical::{ClassicalMamba, TokenMixer, TokenizedMamba};
pub use mamba_kan::{BranchMask, Branches, MambaKanBlock, MambaSettings, Resample};
pub use scan::{scan_core, ScanInputs, Ssm, SCAN_MACS_PER_CELL};
