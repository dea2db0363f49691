//! Reference architectures shipped with the crate (no weights).

use std::path::Path;

use super::{parse_network, NetworkGraph};

pub const DAVE2_DOCUMENT: &str = include_str!("../../models/dave2.toml");
pub const DRONET_TOY_DOCUMENT: &str = include_str!("../../models/dronet_toy.toml");

/// The 13-layer steering network (input, 5 conv, transpose, flatten, 5 FC).
pub fn dave2() -> NetworkGraph {
    parse_network(DAVE2_DOCUMENT, Path::new("."), "models/dave2.toml").expect("bundled document is valid")
}

/// A small residual network with the same stem/blocks/head layout as a
/// drone-control ResNet, sized for desk-scale training and verification.
pub fn dronet_toy() -> NetworkGraph {
    parse_network(DRONET_TOY_DOCUMENT, Path::new("."), "models/dronet_toy.toml").expect("bundled document is valid")
}
