//! Two-scale homogenization of periodic compressible neo-Hookean structures in
//! plane strain.
//!
//! A macroscopic Newton solver ([`macroscale`]) asks a [`backend::CoefficientBackend`]
//! for the homogenized stress and tangent at each quadrature point. Three
//! backends are provided: a full cell solve per point ([`backend::Fe2Backend`]),
//! strain-space clustering with first-order expansion about solved reference
//! states ([`csa::CsaBackend`]), and Galerkin projection of the cell problem
//! onto a snapshot basis ([`pod::PodBackend`]).
//!
//! Everything numeric is generic over [`scalar::Real`]; the aliases below fix
//! the common double-precision instantiation.

pub mod backend;
pub mod csa;
pub mod linalg;
pub mod macroscale;
pub mod material;
pub mod mesh;
pub mod micro;
pub mod pod;
pub mod scalar;
pub mod tensor;

pub type Tensor2f64 = tensor::Tensor2<f64>;
pub type Tensor4f64 = tensor::Tensor4<f64>;
pub type Mesh64 = mesh::Mesh<f64>;
pub type NeoHookean64 = material::NeoHookean<f64>;
pub type CellProblem64 = micro::CellProblem<f64>;
pub type MicroState64 = micro::MicroState<f64>;
pub type MacroProblem64 = macroscale::MacroProblem<f64>;
pub type LoadCase64 = macroscale::LoadCase<f64>;
pub type CoefficientField64 = backend::CoefficientField<f64>;
pub type Fe2Backend64 = backend::Fe2Backend<f64>;
pub type CsaBackend64 = csa::CsaBackend<f64>;
pub type PodBackend64 = pod::PodBackend<f64>;
pub type ReducedBasis64 = pod::ReducedBasis<f64>;
