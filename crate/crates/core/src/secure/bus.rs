//! In-process message bus for the aggregation protocol. Every message is
//! framed and appended to a transcript that can be dumped to bytes and
//! replayed, which is how the tests audit exactly what the server saw.

use super::SecureAggError;

pub const SERVER: u32 = u32::MAX;
pub const DEALER: u32 = u32::MAX - 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub from: u32,
    pub to: u32,
    pub round: u8,
    pub payload: Vec<u8>,
}

#[derive(Default, Debug)]
pub struct SimBus {
    log: Vec<Envelope>,
}

impl SimBus {
    pub fn new() -> Self {
        SimBus::default()
    }

    /// Delivers exactly once: one call, one envelope in the transcript.
    pub fn send(&mut self, env: Envelope) {
        self.log.push(env);
    }

    pub fn messages(&self) -> &[Envelope] {
        &self.log
    }

    /// Frame layout per message, little endian:
    /// [payload_len u32][from u32][to u32][round u8][payload bytes]
    pub fn dump_transcript(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for e in &self.log {
            out.extend_from_slice(&(e.payload.len() as u32).to_le_bytes());
            out.extend_from_slice(&e.from.to_le_bytes());
            out.extend_from_slice(&e.to.to_le_bytes());
            out.push(e.round);
            out.extend_from_slice(&e.payload);
        }
        out
    }

    pub fn replay(bytes: &[u8]) -> Result<Vec<Envelope>, SecureAggError> {
        let mut out = Vec::new();
        let mut off = 0usize;
        while off < bytes.len() {
            if off + 13 > bytes.len() {
                return Err(SecureAggError::Frame("truncated header".into()));
            }
            let len = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
            let from = u32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap());
            let to = u32::from_le_bytes(bytes[off + 8..off + 12].try_into().unwrap());
            let round = bytes[off + 12];
            off += 13;
            if off + len > bytes.len() {
                return Err(SecureAggError::Frame("truncated payload".into()));
            }
            out.push(Envelope { from, to, round, payload: bytes[off..off + len].to_vec() });
            off += len;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_envelopes() -> Vec<Envelope> {
        vec![
            Envelope { from: DEALER, to: 0, round: 0, payload: vec![1, 2, 3] },
            Envelope { from: 0, to: SERVER, round: 1, payload: vec![] },
            Envelope { from: SERVER, to: 2, round: 2, payload: vec![255; 40] },
        ]
    }

    #[test]
    fn transcript_roundtrip() {
        let mut bus = SimBus::new();
        for e in sample_envelopes() {
            bus.send(e);
        }
        let bytes = bus.dump_transcript();
        let back = SimBus::replay(&bytes).unwrap();
        assert_eq!(back, bus.messages());
    }

    #[test]
    fn each_send_is_one_delivery() {
        let mut bus = SimBus::new();
        let e = Envelope { from: 1, to: SERVER, round: 1, payload: vec![9] };
        bus.send(e.clone());
        bus.send(e);
        assert_eq!(bus.messages().len(), 2);
    }

    #[test]
    fn truncated_transcripts_are_rejected() {
        let mut bus = SimBus::new();
        for e in sample_envelopes() {
            bus.send(e);
        }
        let bytes = bus.dump_transcript();
        assert!(SimBus::replay(&bytes[..bytes.len() - 1]).is_err());
        assert!(SimBus::replay(&bytes[..7]).is_err());
        assert!(SimBus::replay(&[]).unwrap().is_empty());
    }
}
