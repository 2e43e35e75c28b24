pub mod agents;
pub mod dsa;
pub mod endpoint;
pub mod experiment;
pub mod kmflash;
pub mod moduledef;
pub mod netsim;
pub mod store;
pub mod time;
