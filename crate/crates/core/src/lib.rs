pub mod controller;
pub mod dsp;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod plant;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    pub struct Overview;
    #[doc = include_str!("../../../book/src/signal-chain.md")]
    pub struct SignalChain;
    #[doc = include_str!("../../../book/src/estimators.md")]
    pub struct Estimators;
    #[doc = include_str!("../../../book/src/tension.md")]
    pub struct Tension;
    #[doc = include_str!("../../../book/src/control.md")]
    pub struct Control;
    #[doc = include_str!("../../../book/src/console.md")]
    pub struct Console;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
