use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::netsim::NodeId;

/// Connectivity detail of one device network card: `address:port/nic`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Endpoint {
    pub address: NodeId,
    pub port: u16,
    pub nic: u8,
}

impl Endpoint {
    pub fn new(address: impl Into<NodeId>, port: u16, nic: u8) -> Result<Self, EndpointError> {
        if port == 0 {
            return Err(EndpointError("port must be in 1..=65535".into()));
        }
        let address = address.into();
        if address.as_str().is_empty() {
            return Err(EndpointError("empty address".into()));
        }
        Ok(Endpoint { address, port, nic })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("invalid endpoint: {0}")]
pub struct EndpointError(pub String);

impl FromStr for Endpoint {
    type Err = EndpointError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (rest, nic) = match s.rsplit_once('/') {
            Some((r, n)) => (r, n.parse::<u8>().map_err(|_| EndpointError(format!("bad nic in {s:?}")))?),
            None => (s, 0),
        };
        let (addr, port) =
            rest.rsplit_once(':').ok_or_else(|| EndpointError(format!("expected address:port in {s:?}")))?;
        let port = port.parse::<u16>().map_err(|_| EndpointError(format!("bad port in {s:?}")))?;
        Endpoint::new(addr, port, nic)
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}/{}", self.address, self.port, self.nic)
    }
}

impl TryFrom<String> for Endpoint {
    type Error = EndpointError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Endpoint> for String {
    fn from(e: Endpoint) -> String {
        e.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        let e: Endpoint = "B:9000/1".parse().unwrap();
        assert_eq!(e.address.as_str(), "B");
        assert_eq!((e.port, e.nic), (9000, 1));
        assert_eq!(e.to_string(), "B:9000/1");
        let d: Endpoint = "A:80".parse().unwrap();
        assert_eq!(d.nic, 0);
    }

    #[test]
    fn rejects_port_zero_and_garbage() {
        assert!("B:0".parse::<Endpoint>().is_err());
        assert!("B".parse::<Endpoint>().is_err());
        assert!(":80".parse::<Endpoint>().is_err());
        assert!("B:70000".parse::<Endpoint>().is_err());
    }
}
