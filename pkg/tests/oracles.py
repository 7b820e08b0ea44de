"""Independent scalar-loop reference implementations.

Everything here works on plain Python lists and floats (float64 semantics)
and deliberately avoids the package's numpy code paths, so tests can compare
two genuinely different routes to the same value.
"""

import math


def to_list(a):
    return a.tolist() if hasattr(a, "tolist") else a


def matmul_loops(a, b):
    a, b = to_list(a), to_list(b)
    rows, inner, cols = len(a), len(b), len(b[0])
    out = [[0.0] * cols for _ in range(rows)]
    for i in range(rows):
        for j in range(cols):
            s = 0.0
            for k in range(inner):
                s += a[i][k] * b[k][j]
            out[i][j] = s
    return out


def linear_loops(x, w, b=None):
    y = matmul_loops(x, w)
    if b is not None:
        b = to_list(b)
        for row in y:
            for j in range(len(row)):
                row[j] += b[j]
    return y


def softmax_row(row):
    m = max(row)
    e = [math.exp(v - m) for v in row]
    z = sum(e)
    return [v / z for v in e]


def layer_norm_loops(x, gamma, beta, eps=1e-5):
    x, gamma, beta = to_list(x), to_list(gamma), to_list(beta)
    out = []
    for row in x:
        n = len(row)
        mu = sum(row) / n
        var = sum((v - mu) ** 2 for v in row) / n
        inv = 1.0 / math.sqrt(var + eps)
        out.append([(v - mu) * inv * g + b for v, g, b in zip(row, gamma, beta)])
    return out


def gelu_scalar(v):
    return 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0)))


def ffn_loops(x, w1, b1, w2, b2):
    h = linear_loops(x, w1, b1)
    h = [[gelu_scalar(v) for v in row] for row in h]
    return linear_loops(h, w2, b2)


def cross_entropy_loops(logits, targets):
    logits, targets = to_list(logits), to_list(targets)
    total = 0.0
    for row, t in zip(logits, targets):
        total += -math.log(softmax_row(row)[t])
    return total / len(logits)


def attention_loops(q_in, k_in, v_in, key_mask, heads, wq, wk, wv, wo):
    """Full multi-head attention forward in scalar arithmetic.

    `key_mask` is a list of booleans (True = masked). Head h uses columns
    [h*dh, (h+1)*dh) of each projection matrix.
    """
    q_in, k_in, v_in = to_list(q_in), to_list(k_in), to_list(v_in)
    wq, wk, wv, wo = to_list(wq), to_list(wk), to_list(wv), to_list(wo)
    d = len(q_in[0])
    dh = d // heads
    lq, lk = len(q_in), len(k_in)
    q = matmul_loops(q_in, wq)
    k = matmul_loops(k_in, wk)
    v = matmul_loops(v_in, wv)
    merged = [[0.0] * d for _ in range(lq)]
    for h in range(heads):
        lo = h * dh
        for i in range(lq):
            scores = []
            for j in range(lk):
                s = 0.0
                for c in range(dh):
                    s += q[i][lo + c] * k[j][lo + c]
                s /= math.sqrt(dh)
                if key_mask is not None and key_mask[j]:
                    s += -1e9
                scores.append(s)
            weights = softmax_row(scores)
            for c in range(dh):
                merged[i][lo + c] = sum(weights[j] * v[j][lo + c] for j in range(lk))
    return matmul_loops(merged, wo)


def attention_weights_loops(q_in, k_in, heads, wq, wk, key_mask=None):
    """Post-softmax attention weights per head, scalar route."""
    q_in, k_in = to_list(q_in), to_list(k_in)
    wq, wk = to_list(wq), to_list(wk)
    d = len(q_in[0])
    dh = d // heads
    q = matmul_loops(q_in, wq)
    k = matmul_loops(k_in, wk)
    out = []
    for h in range(heads):
        lo = h * dh
        head_rows = []
        for i in range(len(q_in)):
            scores = []
            for j in range(len(k_in)):
                s = sum(q[i][lo + c] * k[j][lo + c] for c in range(dh)) / math.sqrt(dh)
                if key_mask is not None and key_mask[j]:
                    s += -1e9
                scores.append(s)
            head_rows.append(softmax_row(scores))
        out.append(head_rows)
    return out


def encoder_block_loops(x, p, heads):
    """One post-norm transformer block in scalar arithmetic.

    `p` maps parameter suffixes (attn.wq, ln1.g, ffn.w1, ...) to lists.
    """
    attn = attention_loops(x, x, x, None, heads,
                           p["attn.wq"], p["attn.wk"], p["attn.wv"], p["attn.wo"])
    resid = [[x[i][j] + attn[i][j] for j in range(len(x[0]))] for i in range(len(x))]
    h = layer_norm_loops(resid, p["ln1.g"], p["ln1.b"])
    ff = ffn_loops(h, p["ffn.w1"], p["ffn.b1"], p["ffn.w2"], p["ffn.b2"])
    resid2 = [[h[i][j] + ff[i][j] for j in range(len(x[0]))] for i in range(len(x))]
    return layer_norm_loops(resid2, p["ln2.g"], p["ln2.b"])


def embed_loops(token_ids, position_ids, language_ids, tok, pos, lang):
    tok, pos, lang = to_list(tok), to_list(pos), to_list(lang)
    return [[tok[t][j] + pos[p][j] + lang[g][j] for j in range(len(tok[0]))]
            for t, p, g in zip(to_list(token_ids), to_list(position_ids),
                               to_list(language_ids))]


# ---------------------------------------------------------------------------
# BPE references: rule-order application and brute-force pair counting


def bpe_apply_rule_order(word, rules):
    """Apply each merge rule exhaustively in table order (reference semantics)."""
    symbols = list(word)
    for a, b in rules:
        merged = []
        i = 0
        while i < len(symbols):
            if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
                merged.append(a + b)
                i += 2
            else:
                merged.append(symbols[i])
                i += 1
        symbols = merged
    return symbols


def bpe_learn_bruteforce(lines, num_merges):
    """Recount every pair from scratch each iteration; ties to smallest pair."""
    words = {}
    for line in lines:
        for w in line.split():
            words[w] = words.get(w, 0) + 1
    state = {w: list(w) for w in words}
    rules = []
    for _ in range(num_merges):
        counts = {}
        for w, symbols in state.items():
            for i in range(len(symbols) - 1):
                pair = (symbols[i], symbols[i + 1])
                counts[pair] = counts.get(pair, 0) + words[w]
        if not counts:
            break
        best_count = max(counts.values())
        best = min(p for p, c in counts.items() if c == best_count)
        rules.append(best)
        for w in state:
            state[w] = _merge_word(state[w], best)
    return rules


def _merge_word(symbols, pair):
    a, b = pair
    out = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def pair_frequencies(lines):
    """Adjacent character-pair frequencies over whitespace words."""
    counts = {}
    for line in lines:
        for w in line.split():
            for i in range(len(w) - 1):
                pair = (w[i], w[i + 1])
                counts[pair] = counts.get(pair, 0) + 1
    return counts


# ---------------------------------------------------------------------------
# span machinery references


def find_occurrences_bruteforce(term, sentence):
    """All matches via quadratic scan, then greedy non-overlap filter."""
    k = len(term)
    all_hits = [i for i in range(len(sentence) - k + 1)
                if list(sentence[i : i + k]) == list(term)]
    hits = []
    last_end = -1
    for i in all_hits:
        if i > last_end:
            hits.append((i, i + k - 1))
            last_end = i + k - 1
    return hits


def decode_bruteforce(p_start, p_end, lo, hi):
    """Reference span decode: explicit max scans with smallest-index ties."""
    p_start, p_end = to_list(p_start), to_list(p_end)
    allowed = [0] + list(range(lo, hi + 1))

    def argmax(vals):
        best_i, best_v = None, None
        for i in allowed:
            if best_v is None or vals[i] > best_v:
                best_i, best_v = i, vals[i]
        return best_i

    s, e = argmax(p_start), argmax(p_end)
    if s == 0 and e == 0:
        return (s, e, None, False)
    if s == 0 or e == 0 or s > e:
        return (s, e, None, True)
    return (s, e, (s, e), False)


def span_ce_loops(p, label_index):
    """Mean binary cross-entropy with class-1 only at label_index."""
    p = to_list(p)
    total = 0.0
    for i, row in enumerate(p):
        cls = 1 if i == label_index else 0
        total += -math.log(row[cls])
    return total / len(p)
