//! Wire framing: a 4-byte big-endian length followed by that many bytes of
//! UTF-8 JSON.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use super::ControlMessage;

pub const MAX_FRAME: usize = 16 * 1024 * 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Frame {
    Subscribe {
        topics: Vec<String>,
    },
    /// Server acknowledgement; deliveries for these topics start after it.
    Subscribed {
        topics: Vec<String>,
    },
    Publish {
        topic: String,
        message: ControlMessage,
    },
    Deliver {
        topic: String,
        message: ControlMessage,
    },
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> io::Result<()> {
    let body = serde_json::to_vec(frame).map_err(io::Error::other)?;
    if body.len() > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "frame exceeds 16 MiB"));
    }
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(&body)?;
    w.flush()
}

/// `Ok(None)` on a clean end of stream between frames.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Frame>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame of {len} bytes exceeds 16 MiB"),
        ));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    serde_json::from_slice(&body)
        .map(Some)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::Payload;

    #[test]
    fn round_trip_and_layout() {
        let frame = Frame::Subscribe {
            topics: vec!["edgewatt/plan".into()],
        };
        let mut buf = Vec::new();
        write_frame(&mut buf, &frame).unwrap();
        let body = br#"{"op":"subscribe","topics":["edgewatt/plan"]}"#;
        assert_eq!(&buf[..4], &(body.len() as u32).to_be_bytes());
        assert_eq!(&buf[4..], body);
        let mut r = &buf[..];
        assert_eq!(read_frame(&mut r).unwrap(), Some(frame));
        assert_eq!(read_frame(&mut r).unwrap(), None);
    }

    #[test]
    fn publish_frame() {
        let frame = Frame::Publish {
            topic: "edgewatt/abort".into(),
            message: ControlMessage {
                run_id: None,
                sender_id: "c".into(),
                sent_at_ms: 0,
                seq: 0,
                payload: Payload::Abort { reason: "x".into() },
            },
        };
        let mut buf = Vec::new();
        write_frame(&mut buf, &frame).unwrap();
        assert_eq!(read_frame(&mut &buf[..]).unwrap(), Some(frame));
    }

    #[test]
    fn oversized_and_truncated_frames_fail() {
        let mut big = (MAX_FRAME as u32 + 1).to_be_bytes().to_vec();
        big.extend_from_slice(b"{}");
        assert!(read_frame(&mut &big[..]).is_err());
        let truncated = [0u8, 0, 0, 10, b'{'];
        assert!(read_frame(&mut &truncated[..]).is_err());
        let garbage = [0u8, 0, 0, 2, b'{', b'x'];
        assert!(read_frame(&mut &garbage[..]).is_err());
    }
}
