//! The depthwise-separable building blocks, the reference two-head network,
//! and weight storage.

mod builder;
mod weights;

pub use builder::{
    build_btp, build_pdp1, build_pdp2, build_pdp3, build_reference_btp, build_tpdp, BtpConfig, TpdpConfig,
    REFERENCE_CLASSES, REFERENCE_GRAPH,
};
pub use weights::{LayerParams, WeightStore, WEIGHTS_MAGIC, WEIGHTS_VERSION};

/// A network named on the command line: `reference` (84 classes), `toy`
/// (2 classes), or the path of a graph description file.
pub fn resolve_graph(name: &str) -> crate::Result<crate::NetGraph> {
    match name {
        "reference" => build_reference_btp(REFERENCE_CLASSES),
        "toy" => BtpConfig::toy(2).build(),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
            crate::graph::parse_graph(&text)
        }
    }
}
