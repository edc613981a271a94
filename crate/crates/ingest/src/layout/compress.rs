//! Self-contained byte-oriented LZ compressor for the compressed block
//! layout. Token stream: a flag byte covers the next 8 tokens, bit set =
//! literal byte, bit clear = (offset, length) back-reference of 2 bytes:
//! 12-bit offset (1-based), 4-bit length minus MIN_MATCH.

pub const COMPRESSOR_LZS: u8 = 1;

const WINDOW: usize = 1 << 12;
const MIN_MATCH: usize = 3;
const MAX_MATCH: usize = MIN_MATCH + 15;

pub fn compress(input: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(input.len() / 2 + 16);
    // Chains of previous positions per 3-byte prefix hash.
    let mut head = vec![usize::MAX; 1 << 13];
    let mut prev = vec![usize::MAX; input.len().max(1)];

    let hash = |data: &[u8], i: usize| -> usize {
        let h = (data[i] as usize) << 10 ^ (data[i + 1] as usize) << 5 ^ data[i + 2] as usize;
        h & ((1 << 13) - 1)
    };

    let mut i = 0;
    let mut flag_at = usize::MAX;
    let mut flag_bit = 8;
    while i < input.len() {
        if flag_bit == 8 {
            flag_at = out.len();
            out.push(0);
            flag_bit = 0;
        }
        let mut best_len = 0;
        let mut best_off = 0;
        if i + MIN_MATCH <= input.len() {
            let mut cand = head[hash(input, i)];
            let mut tries = 32;
            while cand != usize::MAX && i - cand <= WINDOW && tries > 0 {
                let limit = (input.len() - i).min(MAX_MATCH);
                let mut l = 0;
                while l < limit && input[cand + l] == input[i + l] {
                    l += 1;
                }
                if l > best_len {
                    best_len = l;
                    best_off = i - cand;
                    if l == MAX_MATCH {
                        break;
                    }
                }
                cand = prev[cand];
                tries -= 1;
            }
        }
        if best_len >= MIN_MATCH {
            let token = ((best_off as u16 - 1) << 4) | (best_len - MIN_MATCH) as u16;
            out.extend_from_slice(&token.to_le_bytes());
            for k in i..i + best_len {
                if k + MIN_MATCH <= input.len() {
                    let h = hash(input, k);
                    prev[k] = head[h];
                    head[h] = k;
                }
            }
            i += best_len;
        } else {
            out[flag_at] |= 1 << flag_bit;
            out.push(input[i]);
            if i + MIN_MATCH <= input.len() {
                let h = hash(input, i);
                prev[i] = head[h];
                head[h] = i;
            }
            i += 1;
        }
        flag_bit += 1;
    }
    out
}

pub fn decompress(input: &[u8], expected_len: usize) -> Option<Vec<u8>> {
    let mut out = Vec::with_capacity(expected_len);
    let mut i = 0;
    while out.len() < expected_len {
        let flags = *input.get(i)?;
        i += 1;
        for bit in 0..8 {
            if out.len() == expected_len {
                break;
            }
            if flags & (1 << bit) != 0 {
                out.push(*input.get(i)?);
                i += 1;
            } else {
                let lo = *input.get(i)? as u16;
                let hi = *input.get(i + 1)? as u16;
                i += 2;
                let token = lo | (hi << 8);
                let off = (token >> 4) as usize + 1;
                let len = (token & 0xf) as usize + MIN_MATCH;
                if off > out.len() {
                    return None;
                }
                let start = out.len() - off;
                for k in 0..len {
                    let b = out[start + k];
                    out.push(b);
                }
            }
        }
    }
    Some(out)
}
