use std::net::Ipv4Addr;

use thiserror::Error;

use super::OverlayPath;

pub const MAGIC: [u8; 2] = *b"SM";
pub const VERSION: u8 = 1;

/// Bytes before the per-hop sections.
pub const FIXED_LEN: usize = 13;
/// Bytes per hop: one 4-byte address and two 8-byte timestamps.
pub const PER_HOP_LEN: usize = 4 + 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HeaderError {
    #[error("unsupported header (magic {magic:02x?}, version {version})")]
    Unsupported { magic: [u8; 2], version: u8 },
    #[error("truncated header: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("corrupt header: {0}")]
    Corrupt(String),
}

/// Source-routing header carried by every overlay packet.
///
/// ```text
///  0       2       3               11      12      13
/// +-------+-------+---------------+-------+-------+
/// | "SM"  |  ver  |  flow id (BE) | index | count |
/// +-------+-------+---------------+-------+-------+
/// | count x 4-byte hop address (BE)               |
/// +-----------------------------------------------+
/// | count x (forward u64 BE, return u64 BE) in us |
/// +-----------------------------------------------+
/// ```
///
/// Timestamps are microseconds; zero means the slot is unset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmartHeader {
    pub flow_id: u64,
    pub hop_index: u8,
    pub hops: Vec<Ipv4Addr>,
    /// (forward, return) per hop.
    pub timestamps: Vec<[u64; 2]>,
}

impl SmartHeader {
    /// Fresh header for `path` with every timestamp unset.
    pub fn for_path(path: &OverlayPath, flow_id: u64) -> Self {
        let hops: Vec<Ipv4Addr> = path.header_hops().map(|n| n.address()).collect();
        let timestamps = vec![[0, 0]; hops.len()];
        Self {
            flow_id,
            hop_index: 0,
            hops,
            timestamps,
        }
    }

    pub fn hop_count(&self) -> usize {
        self.hops.len()
    }

    pub fn wire_len(&self) -> usize {
        FIXED_LEN + self.hop_count() * PER_HOP_LEN
    }

    pub fn validate(&self) -> Result<(), HeaderError> {
        let count = self.hops.len();
        if count == 0 || count > u8::MAX as usize {
            return Err(HeaderError::Corrupt(format!("hop count {count} out of range")));
        }
        if self.timestamps.len() != count {
            return Err(HeaderError::Corrupt(format!(
                "{} timestamp pairs for {count} hops",
                self.timestamps.len()
            )));
        }
        if self.hop_index as usize > count {
            return Err(HeaderError::Corrupt(format!(
                "hop index {} exceeds hop count {count}",
                self.hop_index
            )));
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>, HeaderError> {
        let mut out = Vec::with_capacity(self.wire_len());
        self.encode_into(&mut out)?;
        Ok(out)
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) -> Result<(), HeaderError> {
        self.validate()?;
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.flow_id.to_be_bytes());
        out.push(self.hop_index);
        out.push(self.hops.len() as u8);
        for hop in &self.hops {
            out.extend_from_slice(&hop.octets());
        }
        for [fwd, ret] in &self.timestamps {
            out.extend_from_slice(&fwd.to_be_bytes());
            out.extend_from_slice(&ret.to_be_bytes());
        }
        Ok(())
    }

    /// Parses a header from the front of `buf`. Trailing bytes (the
    /// encapsulated payload) are ignored; see [`SmartHeader::wire_len`].
    pub fn decode(buf: &[u8]) -> Result<Self, HeaderError> {
        if buf.len() < FIXED_LEN {
            if buf.len() >= 3 && (buf[..2] != MAGIC || buf[2] != VERSION) {
                return Err(HeaderError::Unsupported {
                    magic: [buf[0], buf[1]],
                    version: buf[2],
                });
            }
            return Err(HeaderError::Truncated {
                needed: FIXED_LEN,
                available: buf.len(),
            });
        }
        if buf[..2] != MAGIC || buf[2] != VERSION {
            return Err(HeaderError::Unsupported {
                magic: [buf[0], buf[1]],
                version: buf[2],
            });
        }
        let flow_id = u64::from_be_bytes(buf[3..11].try_into().unwrap());
        let hop_index = buf[11];
        let count = buf[12] as usize;
        if count == 0 {
            return Err(HeaderError::Corrupt("hop count is zero".into()));
        }
        if hop_index as usize > count {
            return Err(HeaderError::Corrupt(format!(
                "hop index {hop_index} exceeds hop count {count}"
            )));
        }
        let needed = FIXED_LEN + count * PER_HOP_LEN;
        if buf.len() < needed {
            return Err(HeaderError::Truncated {
                needed,
                available: buf.len(),
            });
        }
        let addr_end = FIXED_LEN + 4 * count;
        let hops = buf[FIXED_LEN..addr_end]
            .chunks_exact(4)
            .map(|c| Ipv4Addr::new(c[0], c[1], c[2], c[3]))
            .collect();
        let timestamps = buf[addr_end..needed]
            .chunks_exact(16)
            .map(|c| {
                [
                    u64::from_be_bytes(c[..8].try_into().unwrap()),
                    u64::from_be_bytes(c[8..].try_into().unwrap()),
                ]
            })
            .collect();
        Ok(Self {
            flow_id,
            hop_index,
            hops,
            timestamps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlay::NodeId;
    use proptest::prelude::*;

    fn single_hop() -> SmartHeader {
        SmartHeader {
            flow_id: 0,
            hop_index: 0,
            hops: vec![Ipv4Addr::new(10, 0, 0, 2)],
            timestamps: vec![[0, 0]],
        }
    }

    #[test]
    fn single_hop_is_33_bytes() {
        let h = single_hop();
        let bytes = h.encode().unwrap();
        assert_eq!(bytes.len(), 33);
        assert_eq!(&bytes[..3], b"SM\x01");
        assert_eq!(SmartHeader::decode(&bytes).unwrap(), h);
    }

    #[test]
    fn exact_layout() {
        let h = SmartHeader {
            flow_id: 0x0102_0304_0506_0708,
            hop_index: 1,
            hops: vec![Ipv4Addr::new(10, 0, 0, 2), Ipv4Addr::new(10, 0, 0, 3)],
            timestamps: vec![[1, 2], [0x1122, 0]],
        };
        let bytes = h.encode().unwrap();
        let mut expected = vec![0x53, 0x4D, 1, 1, 2, 3, 4, 5, 6, 7, 8, 1, 2];
        expected.extend([10, 0, 0, 2, 10, 0, 0, 3]);
        expected.extend(1u64.to_be_bytes());
        expected.extend(2u64.to_be_bytes());
        expected.extend(0x1122u64.to_be_bytes());
        expected.extend(0u64.to_be_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = single_hop().encode().unwrap();
        bytes[0] = 0;
        bytes[1] = 0;
        assert!(matches!(
            SmartHeader::decode(&bytes),
            Err(HeaderError::Unsupported { magic: [0, 0], .. })
        ));
        let mut bytes = single_hop().encode().unwrap();
        bytes[2] = 2;
        assert!(matches!(
            SmartHeader::decode(&bytes),
            Err(HeaderError::Unsupported { version: 2, .. })
        ));
    }

    #[test]
    fn truncated_and_corrupt() {
        let bytes = single_hop().encode().unwrap();
        assert_eq!(
            SmartHeader::decode(&bytes[..32]),
            Err(HeaderError::Truncated {
                needed: 33,
                available: 32
            })
        );
        assert!(matches!(
            SmartHeader::decode(&bytes[..5]),
            Err(HeaderError::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[11] = 2;
        assert!(matches!(SmartHeader::decode(&bad), Err(HeaderError::Corrupt(_))));
        let mut zero = bytes;
        zero[12] = 0;
        assert!(matches!(SmartHeader::decode(&zero), Err(HeaderError::Corrupt(_))));

        let mut h = single_hop();
        h.hop_index = 3;
        assert!(h.encode().is_err());
    }

    #[test]
    fn for_path_lists_vias_then_destination() {
        let path = OverlayPath::new(NodeId(0), NodeId(2), vec![NodeId(1)]).unwrap();
        let h = SmartHeader::for_path(&path, 9);
        assert_eq!(h.hops, vec![NodeId(1).address(), NodeId(2).address()]);
        assert_eq!(h.wire_len(), 13 + 2 * 20);
    }

    fn header_strategy() -> impl Strategy<Value = SmartHeader> {
        (1usize..=255).prop_flat_map(|count| {
            (
                any::<u64>(),
                0..=count as u8,
                proptest::collection::vec(any::<u32>().prop_map(Ipv4Addr::from), count),
                proptest::collection::vec(any::<[u64; 2]>(), count),
            )
                .prop_map(|(flow_id, hop_index, hops, timestamps)| SmartHeader {
                    flow_id,
                    hop_index,
                    hops,
                    timestamps,
                })
        })
    }

    proptest! {
        #[test]
        fn round_trip(h in header_strategy(), trailer in proptest::collection::vec(any::<u8>(), 0..8)) {
            let mut bytes = h.encode().unwrap();
            prop_assert_eq!(bytes.len(), FIXED_LEN + h.hop_count() * PER_HOP_LEN);
            bytes.extend(trailer);
            prop_assert_eq!(SmartHeader::decode(&bytes).unwrap(), h);
        }
    }
}
