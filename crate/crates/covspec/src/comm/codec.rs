//! Wire codec for the device-edge protocol.
//!
//! Frame layout: one type byte, a 4-byte little-endian body length, then
//! the body. All multi-byte fields are little-endian. Logits travel as raw
//! binary16 codes so a decode is bit-exact with respect to what was sent.
//!
//! The full format, with worked byte dumps, is documented in
//! `docs/protocol.md`.

use crate::error::{CovError, Result};

pub const MSG_UPLINK: u8 = 0x01;
pub const MSG_DOWNLINK_ACCEPT: u8 = 0x02;
pub const MSG_DOWNLINK_REJECT: u8 = 0x03;
pub const MSG_UPLINK_FULL: u8 = 0x04;
pub const MSG_DOWNLINK_CORRECT: u8 = 0x05;

/// Bytes of frame overhead (type + body length), excluded from the
/// payload-bit metric.
pub const FRAME_OVERHEAD_BYTES: u64 = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    /// Gated context IDs plus drafted IDs with one f16 draft probability each.
    Uplink {
        gated_ids: Vec<u32>,
        draft_ids: Vec<u32>,
        draft_probs_f16: Vec<u16>,
    },
    /// Full accept: accepted length and one bonus token.
    DownlinkAccept { accepted_len: u16, bonus_id: u32 },
    /// First rejection: accepted length and the full target logit vector.
    DownlinkReject {
        accepted_len: u16,
        target_logits_f16: Vec<u16>,
    },
    /// Coupled-correction ablation uplink: full draft logit vectors per
    /// drafted position.
    UplinkFull {
        gated_ids: Vec<u32>,
        draft_ids: Vec<u32>,
        vocab_size: u32,
        draft_logits_f16: Vec<u16>,
    },
    /// Coupled-correction ablation downlink: the edge-corrected token.
    DownlinkCorrect { accepted_len: u16, correction_id: u32 },
}

impl Message {
    pub fn type_byte(&self) -> u8 {
        match self {
            Message::Uplink { .. } => MSG_UPLINK,
            Message::DownlinkAccept { .. } => MSG_DOWNLINK_ACCEPT,
            Message::DownlinkReject { .. } => MSG_DOWNLINK_REJECT,
            Message::UplinkFull { .. } => MSG_UPLINK_FULL,
            Message::DownlinkCorrect { .. } => MSG_DOWNLINK_CORRECT,
        }
    }
}

fn put_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CovError::FrameError(format!(
                "need {n} bytes at offset {}, body has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u16_vec(&mut self, n: usize) -> Result<Vec<u16>> {
        let raw = self.take(2 * n)?;
        Ok(raw
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn u32_vec(&mut self, n: usize) -> Result<Vec<u32>> {
        let raw = self.take(4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(CovError::FrameError(format!(
                "{} trailing bytes after message body",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn encode_body(msg: &Message) -> Vec<u8> {
    let mut b = Vec::new();
    match msg {
        Message::Uplink {
            gated_ids,
            draft_ids,
            draft_probs_f16,
        } => {
            assert_eq!(draft_ids.len(), draft_probs_f16.len());
            put_u16(&mut b, gated_ids.len() as u16);
            put_u16(&mut b, draft_ids.len() as u16);
            for &id in gated_ids {
                put_u32(&mut b, id);
            }
            for &id in draft_ids {
                put_u32(&mut b, id);
            }
            for &p in draft_probs_f16 {
                put_u16(&mut b, p);
            }
        }
        Message::DownlinkAccept {
            accepted_len,
            bonus_id,
        } => {
            put_u16(&mut b, *accepted_len);
            put_u32(&mut b, *bonus_id);
        }
        Message::DownlinkReject {
            accepted_len,
            target_logits_f16,
        } => {
            put_u16(&mut b, *accepted_len);
            put_u32(&mut b, target_logits_f16.len() as u32);
            for &z in target_logits_f16 {
                put_u16(&mut b, z);
            }
        }
        Message::UplinkFull {
            gated_ids,
            draft_ids,
            vocab_size,
            draft_logits_f16,
        } => {
            assert_eq!(
                draft_logits_f16.len(),
                draft_ids.len() * *vocab_size as usize
            );
            put_u16(&mut b, gated_ids.len() as u16);
            put_u16(&mut b, draft_ids.len() as u16);
            put_u32(&mut b, *vocab_size);
            for &id in gated_ids {
                put_u32(&mut b, id);
            }
            for &id in draft_ids {
                put_u32(&mut b, id);
            }
            for &z in draft_logits_f16 {
                put_u16(&mut b, z);
            }
        }
        Message::DownlinkCorrect {
            accepted_len,
            correction_id,
        } => {
            put_u16(&mut b, *accepted_len);
            put_u32(&mut b, *correction_id);
        }
    }
    b
}

/// Encodes a message into a full frame.
pub fn encode_message(msg: &Message) -> Vec<u8> {
    let body = encode_body(msg);
    let mut frame = Vec::with_capacity(body.len() + 5);
    frame.push(msg.type_byte());
    frame.extend_from_slice(&(body.len() as u32).to_le_bytes());
    frame.extend_from_slice(&body);
    frame
}

/// Decodes one frame, returning the message and the bytes consumed.
pub fn decode_message(buf: &[u8]) -> Result<(Message, usize)> {
    if buf.len() < 5 {
        return Err(CovError::FrameError("frame header truncated".into()));
    }
    let ty = buf[0];
    let body_len = u32::from_le_bytes(buf[1..5].try_into().unwrap()) as usize;
    if buf.len() < 5 + body_len {
        return Err(CovError::FrameError(format!(
            "frame body truncated: declared {body_len}, have {}",
            buf.len() - 5
        )));
    }
    let body = &buf[5..5 + body_len];
    let mut r = Reader::new(body);
    let msg = match ty {
        MSG_UPLINK => {
            let n_gated = r.u16()? as usize;
            let n_draft = r.u16()? as usize;
            let gated_ids = r.u32_vec(n_gated)?;
            let draft_ids = r.u32_vec(n_draft)?;
            let draft_probs_f16 = r.u16_vec(n_draft)?;
            Message::Uplink {
                gated_ids,
                draft_ids,
                draft_probs_f16,
            }
        }
        MSG_DOWNLINK_ACCEPT => Message::DownlinkAccept {
            accepted_len: r.u16()?,
            bonus_id: r.u32()?,
        },
        MSG_DOWNLINK_REJECT => {
            let accepted_len = r.u16()?;
            let vocab = r.u32()? as usize;
            Message::DownlinkReject {
                accepted_len,
                target_logits_f16: r.u16_vec(vocab)?,
            }
        }
        MSG_UPLINK_FULL => {
            let n_gated = r.u16()? as usize;
            let n_draft = r.u16()? as usize;
            let vocab_size = r.u32()?;
            let gated_ids = r.u32_vec(n_gated)?;
            let draft_ids = r.u32_vec(n_draft)?;
            let draft_logits_f16 = r.u16_vec(n_draft * vocab_size as usize)?;
            Message::UplinkFull {
                gated_ids,
                draft_ids,
                vocab_size,
                draft_logits_f16,
            }
        }
        MSG_DOWNLINK_CORRECT => Message::DownlinkCorrect {
            accepted_len: r.u16()?,
            correction_id: r.u32()?,
        },
        other => return Err(CovError::UnknownMessage(other)),
    };
    r.finish()?;
    Ok((msg, 5 + body_len))
}
