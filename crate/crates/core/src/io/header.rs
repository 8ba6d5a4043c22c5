//! Whitespace-separated ASCII header tokens shared by PFM and PPM.

use crate::error::{Error, Result};

pub(crate) struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    comments: bool,
}

impl<'a> HeaderReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], comments: bool) -> Self {
        HeaderReader {
            bytes,
            pos: 0,
            comments,
        }
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if self.comments && b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    /// Next token, with its starting offset.
    pub(crate) fn token(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.skip_space();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace())
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start, format!("missing {what}")));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::format(start, format!("{what} is not ASCII")))?;
        Ok((start, text))
    }

    pub(crate) fn dimension(&mut self, what: &str) -> Result<usize> {
        let (at, tok) = self.token(what)?;
        match tok.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(Error::format(at, format!("{what} must be a positive integer, got {tok:?}"))),
        }
    }

    /// Consumes the single whitespace byte that ends the header.
    pub(crate) fn end_of_header(&mut self) -> Result<usize> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(self.pos)
            }
            _ => Err(Error::format(self.pos, "header must end with a single whitespace byte")),
        }
    }
}
