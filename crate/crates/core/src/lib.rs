pub mod ambiguity;
pub mod dataset;
pub mod dpmm;
pub mod oracle;
pub mod pipeline;
pub mod program;
pub mod reformulate;
pub mod rng;
pub mod solve;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/clustering.md")]
    struct Clustering;
    #[doc = include_str!("../../../book/src/ambiguity.md")]
    struct Ambiguity;
    #[doc = include_str!("../../../book/src/programs.md")]
    struct Programs;
}
