pub mod critics;
pub mod data;
pub mod diversity;
pub mod error;
pub mod function_spaces;
pub mod generators;
pub mod gopo;
pub mod mdp;
pub mod numeric;
pub mod verify;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/mdps.md")]
    mod mdps {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/critics.md")]
    mod critics {}
    #[doc = include_str!("../../../book/src/actor_critic.md")]
    mod actor_critic {}
    #[doc = include_str!("../../../book/src/coverage.md")]
    mod coverage {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
