//! Incremental extraction of the first part of a `multipart/x-mixed-replace`
//! stream.

/// Feeds arbitrary chunks of a multipart body and yields the first complete
/// part payload.
#[derive(Debug)]
pub struct FirstPartReader {
    delimiter: Vec<u8>,
    buf: Vec<u8>,
    state: State,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    SeekingDelimiter,
    Headers { from: usize },
    Body { start: usize, len: Option<usize> },
}

/// What was left when the stream ended before a part completed.
#[derive(Debug, PartialEq, Eq)]
pub enum Unfinished {
    /// No part had started.
    Nothing,
    /// A part started; these are its payload bytes so far.
    Partial(Vec<u8>),
}

impl FirstPartReader {
    /// `boundary` as given in the content type; a leading `--` is tolerated.
    pub fn new(boundary: &str) -> Self {
        let b = boundary.trim().trim_matches('"');
        let b = b.strip_prefix("--").unwrap_or(b);
        Self {
            delimiter: format!("--{b}").into_bytes(),
            buf: Vec::new(),
            state: State::SeekingDelimiter,
        }
    }

    /// Bytes buffered so far.
    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    pub fn push(&mut self, chunk: &[u8]) -> Option<Vec<u8>> {
        self.buf.extend_from_slice(chunk);
        loop {
            match self.state {
                State::SeekingDelimiter => {
                    let at = find(&self.buf, &self.delimiter, 0)?;
                    let after = at + self.delimiter.len();
                    let eol = find(&self.buf, b"\n", after)?;
                    self.state = State::Headers { from: eol + 1 };
                }
                State::Headers { from } => {
                    let rest = &self.buf[from..];
                    if rest.len() < 2 {
                        return None;
                    }
                    // A blank first line means the part has no headers.
                    let (end, sep) = if rest.starts_with(b"\r\n") {
                        (from, 2)
                    } else if rest.starts_with(b"\n") {
                        (from, 1)
                    } else {
                        match (find(&self.buf, b"\r\n\r\n", from), find(&self.buf, b"\n\n", from)) {
                            (Some(a), Some(b)) if b < a => (b, 2),
                            (Some(a), _) => (a, 4),
                            (None, Some(b)) => (b, 2),
                            (None, None) => return None,
                        }
                    };
                    let len = content_length(&self.buf[from..end]);
                    self.state = State::Body {
                        start: end + sep,
                        len,
                    };
                }
                State::Body { start, len: Some(len) } => {
                    if self.buf.len() >= start + len {
                        return Some(self.buf[start..start + len].to_vec());
                    }
                    return None;
                }
                State::Body { start, len: None } => {
                    let mut next = b"\r\n".to_vec();
                    next.extend_from_slice(&self.delimiter);
                    let end = find(&self.buf, &next, start)?;
                    return Some(self.buf[start..end].to_vec());
                }
            }
        }
    }

    pub fn finish(self) -> Unfinished {
        match self.state {
            State::Body { start, .. } if self.buf.len() > start => Unfinished::Partial(self.buf[start..].to_vec()),
            _ => Unfinished::Nothing,
        }
    }
}

fn find(hay: &[u8], needle: &[u8], from: usize) -> Option<usize> {
    if from >= hay.len() || needle.is_empty() {
        return None;
    }
    hay[from..]
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|p| p + from)
}

fn content_length(headers: &[u8]) -> Option<usize> {
    let text = String::from_utf8_lossy(headers);
    text.lines().find_map(|line| {
        let (name, value) = line.split_once(':')?;
        if name.trim().eq_ignore_ascii_case("content-length") {
            value.trim().parse().ok()
        } else {
            None
        }
    })
}

/// The `boundary` parameter of a multipart content type, if the type is
/// multipart at all.
pub fn boundary_of(content_type: &str) -> Option<String> {
    let mut parts = content_type.split(';');
    let mime = parts.next()?.trim().to_ascii_lowercase();
    if !mime.starts_with("multipart/") {
        return None;
    }
    parts.find_map(|p| {
        let (k, v) = p.split_once('=')?;
        k.trim()
            .eq_ignore_ascii_case("boundary")
            .then(|| v.trim().trim_matches('"').to_string())
    })
}
