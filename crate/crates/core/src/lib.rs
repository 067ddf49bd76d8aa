pub mod certificates;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod methods;
pub mod problems;
pub mod prox;
pub mod record;
pub mod schedules;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, Weights};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/problems.md")]
    mod problems {}
    #[doc = include_str!("../../../book/src/prox.md")]
    mod prox {}
    #[doc = include_str!("../../../book/src/step_sizes.md")]
    mod step_sizes {}
    #[doc = include_str!("../../../book/src/methods.md")]
    mod methods {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/certificates.md")]
    mod certificates {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
