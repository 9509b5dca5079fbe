pub mod agents;
pub mod datafree;
pub mod judges;
pub mod metrics;
pub mod pipeline;
pub mod selfmod;
pub mod server;
pub mod store;
pub mod toyworld;
pub mod video;
