use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{HeaderError, NodeId, OverlayError, OverlayPath, SmartHeader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Misrouted,
    Corrupt,
    NoRoute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardAction {
    SendTo(NodeId),
    DeliverToRA,
    Drop(DropReason),
}

/// Per-node forwarding state: the routing table written by the routing agent
/// and a few counters.
#[derive(Debug, Clone, Default)]
pub struct Proxy {
    node: Option<NodeId>,
    routes: BTreeMap<NodeId, OverlayPath>,
    pub forwarded: u64,
    pub delivered: u64,
    pub dropped: u64,
}

impl Proxy {
    pub fn new(node: NodeId) -> Self {
        Self {
            node: Some(node),
            ..Self::default()
        }
    }

    pub fn node(&self) -> NodeId {
        self.node.expect("proxy constructed through Proxy::new")
    }

    pub fn install_route(&mut self, path: OverlayPath) -> Result<(), OverlayError> {
        if path.src() != self.node() {
            return Err(OverlayError::InvalidPath(format!(
                "route {path} does not start at proxy {}",
                self.node()
            )));
        }
        self.routes.insert(path.dst(), path);
        Ok(())
    }

    pub fn route(&self, dst: NodeId) -> Option<&OverlayPath> {
        self.routes.get(&dst)
    }

    /// Wraps an outbound packet from the local TA: writes the installed path
    /// into a fresh header and names the first proxy to send it to.
    pub fn encapsulate(&self, dst: NodeId, flow_id: u64) -> Result<(SmartHeader, NodeId), ForwardAction> {
        let path = self
            .routes
            .get(&dst)
            .ok_or(ForwardAction::Drop(DropReason::NoRoute))?;
        let header = SmartHeader::for_path(path, flow_id);
        let first = path.header_hops().next().expect("paths have at least one hop");
        Ok((header, first))
    }

    /// Handles a packet arriving at this proxy on its forward journey.
    /// Stamps the forward slot of the current hop with `now_us`.
    pub fn forward(&mut self, header: &mut SmartHeader, now_us: u64) -> ForwardAction {
        let action = forward_step(self.node(), header, now_us);
        match action {
            ForwardAction::SendTo(_) => self.forwarded += 1,
            ForwardAction::DeliverToRA => self.delivered += 1,
            ForwardAction::Drop(_) => self.dropped += 1,
        }
        action
    }

    /// Byte-level variant of [`Proxy::forward`]: decodes, forwards and
    /// rewrites the header in place.
    pub fn forward_bytes(&mut self, packet: &mut [u8], now_us: u64) -> ForwardAction {
        let mut header = match SmartHeader::decode(packet) {
            Ok(h) => h,
            Err(_) => {
                self.dropped += 1;
                return ForwardAction::Drop(DropReason::Corrupt);
            }
        };
        let action = self.forward(&mut header, now_us);
        if !matches!(action, ForwardAction::Drop(_)) {
            let mut bytes = Vec::with_capacity(header.wire_len());
            header.encode_into(&mut bytes).expect("forwarded header stays valid");
            packet[..bytes.len()].copy_from_slice(&bytes);
        }
        action
    }
}

fn forward_step(node: NodeId, header: &mut SmartHeader, now_us: u64) -> ForwardAction {
    if header.validate().is_err() {
        return ForwardAction::Drop(DropReason::Corrupt);
    }
    let idx = header.hop_index as usize;
    let count = header.hop_count();
    if idx >= count {
        return ForwardAction::Drop(DropReason::Corrupt);
    }
    if header.hops[idx] != node.address() {
        return ForwardAction::Drop(DropReason::Misrouted);
    }
    header.timestamps[idx][0] = now_us;
    if idx + 1 < count {
        header.hop_index += 1;
        match NodeId::from_address(header.hops[idx + 1]) {
            Some(next) => ForwardAction::SendTo(next),
            None => ForwardAction::Drop(DropReason::Corrupt),
        }
    } else {
        ForwardAction::DeliverToRA
    }
}

/// Stamps the return slot of hop `hop` as the probe passes back through it.
pub fn stamp_return(header: &mut SmartHeader, hop: usize, now_us: u64) -> Result<(), HeaderError> {
    let count = header.hop_count();
    let slot = header
        .timestamps
        .get_mut(hop)
        .ok_or_else(|| HeaderError::Corrupt(format!("hop {hop} out of {count}")))?;
    slot[1] = now_us;
    Ok(())
}

/// A probe as seen by the source proxy once it has come back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StampedProbe {
    pub sent_at_us: u64,
    /// Absent when the probe never returned.
    pub returned_at_us: Option<u64>,
    pub header: SmartHeader,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathRtd {
    pub total_us: u64,
    pub segments_us: Vec<u64>,
}

/// Total and per-segment round-trip delays from the stamps of a returned
/// probe. Segment k spans hop k−1 → hop k, the source standing in for hop −1.
pub fn path_rtd_from_segments(probe: &StampedProbe) -> Result<PathRtd, OverlayError> {
    let returned = probe.returned_at_us.ok_or(OverlayError::IncompleteProbe(
        "probe did not return".into(),
    ))?;
    let header = &probe.header;
    header.validate().map_err(OverlayError::Header)?;
    if let Some(k) = header
        .timestamps
        .iter()
        .position(|[fwd, ret]| *fwd == 0 || *ret == 0)
    {
        return Err(OverlayError::IncompleteProbe(format!("hop {k} has an unset timestamp")));
    }
    let bad_order = || OverlayError::IncompleteProbe("timestamps out of order".into());
    let mut segments = Vec::with_capacity(header.hop_count());
    let mut prev_fwd = probe.sent_at_us;
    let mut prev_ret = returned;
    for &[fwd, ret] in &header.timestamps {
        let out = fwd.checked_sub(prev_fwd).ok_or_else(bad_order)?;
        let back = prev_ret.checked_sub(ret).ok_or_else(bad_order)?;
        segments.push(out + back);
        prev_fwd = fwd;
        prev_ret = ret;
    }
    let total = returned.checked_sub(probe.sent_at_us).ok_or_else(bad_order)?;
    Ok(PathRtd {
        total_us: total,
        segments_us: segments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    const A: NodeId = NodeId(0);
    const B: NodeId = NodeId(1);
    const C: NodeId = NodeId(2);
    const D: NodeId = NodeId(3);

    fn abc_header() -> SmartHeader {
        let path = OverlayPath::new(A, C, vec![B]).unwrap();
        SmartHeader::for_path(&path, 7)
    }

    #[test]
    fn intermediate_hop_sends_on() {
        let mut h = abc_header();
        let mut b = Proxy::new(B);
        assert_eq!(b.forward(&mut h, 50), ForwardAction::SendTo(C));
        assert_eq!(h.hop_index, 1);
        assert_eq!(h.timestamps[0][0], 50);
    }

    #[test]
    fn final_hop_delivers() {
        let mut h = abc_header();
        h.hop_index = 1;
        let mut c = Proxy::new(C);
        assert_eq!(c.forward(&mut h, 90), ForwardAction::DeliverToRA);
        assert_eq!(c.delivered, 1);
    }

    #[test]
    fn unnamed_node_drops() {
        let mut h = abc_header();
        let mut d = Proxy::new(D);
        assert_eq!(d.forward(&mut h, 1), ForwardAction::Drop(DropReason::Misrouted));
        let mut h = abc_header();
        h.hop_index = 2;
        assert_eq!(Proxy::new(C).forward(&mut h, 1), ForwardAction::Drop(DropReason::Corrupt));
    }

    #[test]
    fn corrupt_bytes_drop() {
        let mut p = Proxy::new(B);
        let mut junk = vec![0u8; 40];
        assert_eq!(p.forward_bytes(&mut junk, 1), ForwardAction::Drop(DropReason::Corrupt));
    }

    #[test]
    fn encapsulate_uses_routing_table() {
        let mut a = Proxy::new(A);
        assert_eq!(
            a.encapsulate(C, 1).unwrap_err(),
            ForwardAction::Drop(DropReason::NoRoute)
        );
        a.install_route(OverlayPath::new(A, C, vec![B]).unwrap()).unwrap();
        let (h, first) = a.encapsulate(C, 1).unwrap();
        assert_eq!(first, B);
        assert_eq!(h.hops, vec![Ipv4Addr::new(10, 0, 0, 2), Ipv4Addr::new(10, 0, 0, 3)]);
        assert!(a.install_route(OverlayPath::direct(B, C).unwrap()).is_err());
    }

    #[test]
    fn delivery_takes_exactly_hop_count_steps() {
        let path = OverlayPath::new(NodeId(0), NodeId(4), vec![NodeId(2), NodeId(1), NodeId(3)]).unwrap();
        let mut proxies: Vec<Proxy> = (0..5).map(|k| Proxy::new(NodeId(k))).collect();
        let mut src = Proxy::new(NodeId(0));
        src.install_route(path.clone()).unwrap();
        let (header, mut at) = src.encapsulate(NodeId(4), 3).unwrap();
        let mut packet = header.encode().unwrap();
        packet.extend_from_slice(b"payload");
        let mut steps = 0;
        loop {
            steps += 1;
            match proxies[at.index()].forward_bytes(&mut packet, steps) {
                ForwardAction::SendTo(next) => at = next,
                ForwardAction::DeliverToRA => break,
                ForwardAction::Drop(r) => panic!("dropped: {r:?}"),
            }
        }
        assert_eq!(steps, path.hop_count() as u64);
        assert_eq!(at, NodeId(4));
        assert!(packet.ends_with(b"payload"));
    }

    #[test]
    fn one_hop_probe_rtd() {
        let path = OverlayPath::direct(A, B).unwrap();
        let mut header = SmartHeader::for_path(&path, 0);
        header.timestamps[0] = [200_000, 200_000];
        let probe = StampedProbe {
            sent_at_us: 0,
            returned_at_us: Some(400_000),
            header,
        };
        let rtd = path_rtd_from_segments(&probe).unwrap();
        assert_eq!(rtd.total_us, 400_000);
        assert_eq!(rtd.segments_us, vec![400_000]);
    }

    #[test]
    fn two_hop_probe_rtd() {
        // Segments of 100 ms and 150 ms, split evenly each way.
        let mut header = abc_header();
        let t0 = 1_000;
        header.timestamps[0][0] = t0 + 50_000;
        header.timestamps[1][0] = t0 + 125_000;
        header.timestamps[1][1] = t0 + 125_000;
        header.timestamps[0][1] = t0 + 200_000;
        let probe = StampedProbe {
            sent_at_us: t0,
            returned_at_us: Some(t0 + 250_000),
            header,
        };
        let rtd = path_rtd_from_segments(&probe).unwrap();
        assert_eq!(rtd.segments_us, vec![100_000, 150_000]);
        assert_eq!(rtd.total_us, 250_000);
        assert_eq!(rtd.segments_us.iter().sum::<u64>(), rtd.total_us);
    }

    #[test]
    fn missing_return_is_incomplete() {
        let mut header = abc_header();
        header.timestamps = vec![[5, 9], [7, 7]];
        let probe = StampedProbe {
            sent_at_us: 1,
            returned_at_us: None,
            header: header.clone(),
        };
        assert!(matches!(
            path_rtd_from_segments(&probe),
            Err(OverlayError::IncompleteProbe(_))
        ));
        header.timestamps[0][1] = 0;
        let probe = StampedProbe {
            sent_at_us: 1,
            returned_at_us: Some(12),
            header,
        };
        assert!(matches!(
            path_rtd_from_segments(&probe),
            Err(OverlayError::IncompleteProbe(_))
        ));
    }
}
