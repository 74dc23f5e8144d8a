#include "mstwins/nn.hpp"

#include <cmath>

namespace mstwins {

Tensor ParamRegistry::add(const std::string& name, Tensor init) {
  MST_CHECK(index_.find(name) == index_.end(), "ParamRegistry: duplicate parameter " + name);
  init.set_requires_grad(true);
  index_[name] = entries_.size();
  entries_.emplace_back(name, init);
  return init;
}

Tensor* ParamRegistry::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second].second;
}

int64_t ParamRegistry::total_elements() const {
  int64_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

void ParamRegistry::zero_grads() {
  const int64_t n = static_cast<int64_t>(entries_.size());
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) entries_[static_cast<size_t>(i)].second.zero_grad();
}

Linear make_linear(ParamRegistry& reg, const std::string& prefix, int64_t in, int64_t out,
                   Rng& rng, double stddev) {
  Linear l;
  l.w = reg.add(prefix + ".w", Tensor::randn({in, out}, rng, stddev));
  l.b = reg.add(prefix + ".b", Tensor::zeros({out}));
  return l;
}

LayerNormParams make_layernorm(ParamRegistry& reg, const std::string& prefix, int64_t c) {
  LayerNormParams p;
  p.gamma = reg.add(prefix + ".g", Tensor::ones({c}));
  p.beta = reg.add(prefix + ".b", Tensor::zeros({c}));
  return p;
}

Conv2dParams make_conv(ParamRegistry& reg, const std::string& prefix, int64_t cout, int64_t cin,
                       int64_t kernel, int64_t stride, int64_t padding, int64_t groups, Rng& rng,
                       double stddev) {
  Conv2dParams p;
  const int64_t cin_g = cin / groups;
  if (stddev < 0.0) stddev = std::sqrt(2.0 / static_cast<double>(cin_g * kernel * kernel));
  p.w = reg.add(prefix + ".w", Tensor::randn({cout, cin_g, kernel, kernel}, rng, stddev));
  p.b = reg.add(prefix + ".b", Tensor::zeros({cout}));
  p.stride = stride;
  p.padding = padding;
  p.groups = groups;
  return p;
}

Tensor linear(const Tensor& x, const Linear& l) {
  const int64_t in = l.w.size(0);
  const int64_t out = l.w.size(1);
  MST_CHECK(x.shape().back() == in, "linear: expected trailing extent " + std::to_string(in) +
                                        ", got " + shape_str(x.shape()));
  Shape os = x.shape();
  os.back() = out;
  Tensor flat = reshape(x, {x.numel() / in, in});
  Tensor y = add(matmul(flat, l.w), l.b);
  return reshape(y, std::move(os));
}

Tensor layernorm(const Tensor& x, const LayerNormParams& p) {
  return layernorm(x, p.gamma, p.beta);
}

Tensor conv2d(const Tensor& x, const Conv2dParams& p) {
  return conv2d(x, p.w, p.b, p.stride, p.padding, p.groups);
}

Tensor to_tokens(const Tensor& x) {
  MST_CHECK(x.dim() == 4, "to_tokens: expected (B,C,H,W)");
  const int64_t b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  return transpose(reshape(x, {b, c, h * w}), {0, 2, 1});
}

Tensor to_grid(const Tensor& tokens, int64_t h, int64_t w) {
  MST_CHECK(tokens.dim() == 3, "to_grid: expected (B,N,C)");
  const int64_t b = tokens.size(0), n = tokens.size(1), c = tokens.size(2);
  MST_CHECK(n == h * w, "to_grid: token count does not match h*w");
  return reshape(transpose(tokens, {0, 2, 1}), {b, c, h, w});
}

AttentionParams make_attention(ParamRegistry& reg, const std::string& prefix, int64_t dim,
                               int64_t num_heads, int64_t window, int64_t sr_ratio, Rng& rng) {
  MST_CHECK(num_heads >= 1 && dim % num_heads == 0,
            "attention: num_heads must divide dim (dim=" + std::to_string(dim) + ", heads=" +
                std::to_string(num_heads) + ")");
  MST_CHECK(window >= 1, "attention: window must be positive");
  MST_CHECK(sr_ratio >= 1, "attention: sr_ratio must be positive");
  AttentionParams p;
  p.dim = dim;
  p.num_heads = num_heads;
  p.window = window;
  p.sr_ratio = sr_ratio;
  p.q = make_linear(reg, prefix + ".q", dim, dim, rng);
  p.k = make_linear(reg, prefix + ".k", dim, dim, rng);
  p.v = make_linear(reg, prefix + ".v", dim, dim, rng);
  p.proj = make_linear(reg, prefix + ".proj", dim, dim, rng);
  if (sr_ratio > 1) {
    p.sr = make_conv(reg, prefix + ".sr", dim, dim, sr_ratio, sr_ratio, 0, 1, rng);
    p.sr_norm = make_layernorm(reg, prefix + ".srnorm", dim);
  }
  return p;
}

Tensor attention(const Tensor& q_tokens, const Tensor& kv_tokens, const AttentionParams& p,
                 Tensor* attn_out) {
  const int64_t b = q_tokens.size(0);
  const int64_t nq = q_tokens.size(1);
  const int64_t nkv = kv_tokens.size(1);
  const int64_t c = p.dim;
  const int64_t h = p.num_heads;
  const int64_t d = c / h;
  MST_CHECK(q_tokens.size(2) == c && kv_tokens.size(2) == c, "attention: channel mismatch");

  auto split_heads = [&](const Tensor& t, int64_t n) {
    return transpose(reshape(t, {b, n, h, d}), {0, 2, 1, 3});  // (B,h,N,d)
  };
  Tensor qh = split_heads(linear(q_tokens, p.q), nq);
  Tensor kh = split_heads(linear(kv_tokens, p.k), nkv);
  Tensor vh = split_heads(linear(kv_tokens, p.v), nkv);

  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor scores = mul(matmul(qh, transpose(kh, {0, 1, 3, 2})), scale);
  Tensor weights = softmax(scores, -1);
  if (attn_out) *attn_out = weights;
  Tensor ctx = matmul(weights, vh);                              // (B,h,Nq,d)
  Tensor merged = reshape(transpose(ctx, {0, 2, 1, 3}), {b, nq, c});
  return linear(merged, p.proj);
}

namespace {

// right/bottom zero-pad so both spatial extents divide `multiple`
Tensor pad_to_multiple(const Tensor& x, int64_t multiple, int64_t& hp, int64_t& wp) {
  const int64_t h = x.size(2), w = x.size(3);
  hp = (h + multiple - 1) / multiple * multiple;
  wp = (w + multiple - 1) / multiple * multiple;
  if (hp == h && wp == w) return x;
  return pad2d(x, 0, hp - h, 0, wp - w);
}

}  // namespace

Tensor lsa(const Tensor& x, const AttentionParams& p) {
  MST_CHECK(x.dim() == 4, "lsa: expected (B,C,H,W)");
  MST_CHECK(p.window >= 1, "lsa: window must be positive");
  const int64_t b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  MST_CHECK(c == p.dim, "lsa: channel mismatch");
  int64_t hp = 0, wp = 0;
  Tensor padded = pad_to_multiple(x, p.window, hp, wp);
  const int64_t win = p.window;
  const int64_t nh = hp / win, nw = wp / win;

  // (B,C,nh,win,nw,win) -> (B,nh,nw,win,win,C) -> (B*nh*nw, win*win, C)
  Tensor grouped = transpose(reshape(padded, {b, c, nh, win, nw, win}), {0, 2, 4, 3, 5, 1});
  Tensor tokens = reshape(grouped, {b * nh * nw, win * win, c});
  Tensor out = attention(tokens, tokens, p);
  Tensor regrouped = transpose(reshape(out, {b, nh, nw, win, win, c}), {0, 5, 1, 3, 2, 4});
  Tensor grid = reshape(regrouped, {b, c, hp, wp});
  if (hp != h || wp != w) grid = crop2d(grid, 0, 0, h, w);
  return grid;
}

Tensor gsa(const Tensor& x, const AttentionParams& p) {
  MST_CHECK(x.dim() == 4, "gsa: expected (B,C,H,W)");
  MST_CHECK(p.sr_ratio >= 1, "gsa: sr_ratio must be positive");
  const int64_t b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  MST_CHECK(c == p.dim, "gsa: channel mismatch");
  Tensor q_tokens = to_tokens(x);
  Tensor kv_tokens;
  if (p.sr_ratio == 1) {
    kv_tokens = q_tokens;
  } else {
    int64_t hp = 0, wp = 0;
    Tensor padded = pad_to_multiple(x, p.sr_ratio, hp, wp);
    Tensor reduced = conv2d(padded, p.sr);
    kv_tokens = layernorm(to_tokens(reduced), p.sr_norm);
  }
  Tensor out = attention(q_tokens, kv_tokens, p);
  return to_grid(out, h, w);
}

PatchEmbed make_patch_embed(ParamRegistry& reg, const std::string& prefix, const StageConfig& cfg,
                            Rng& rng) {
  PatchEmbed pe;
  pe.stride = cfg.patch_stride;
  pe.proj = make_conv(reg, prefix + ".proj", cfg.out_channels, cfg.in_channels, cfg.patch_stride,
                      cfg.patch_stride, 0, 1, rng);
  pe.norm = make_layernorm(reg, prefix + ".norm", cfg.out_channels);
  return pe;
}

Tensor patch_embed(const Tensor& x, const PatchEmbed& pe) {
  MST_CHECK(x.dim() == 4, "patch_embed: expected (B,C,H,W)");
  MST_CHECK(x.size(2) >= pe.stride && x.size(3) >= pe.stride,
            "patch_embed: spatial extent smaller than stride");
  int64_t hp = 0, wp = 0;
  Tensor padded = pad_to_multiple(x, pe.stride, hp, wp);
  Tensor y = conv2d(padded, pe.proj);
  Tensor tokens = layernorm(to_tokens(y), pe.norm);
  return to_grid(tokens, y.size(2), y.size(3));
}

StageBlocks make_stage_blocks(ParamRegistry& reg, const std::string& prefix, const StageConfig& cfg,
                              bool use_cpe, Rng& rng) {
  StageBlocks blocks;
  blocks.use_cpe = use_cpe;
  const int64_t c = cfg.out_channels;
  for (int64_t i = 0; i < cfg.depth; ++i) {
    for (bool local : {true, false}) {
      BlockUnit u;
      u.local = local;
      const std::string base = prefix + ".blk" + std::to_string(i) + (local ? ".lsa" : ".gsa");
      u.norm1 = make_layernorm(reg, base + ".norm1", c);
      u.attn = make_attention(reg, base + ".attn", c, cfg.num_heads, cfg.window,
                              local ? 1 : cfg.sr_ratio, rng);
      u.norm2 = make_layernorm(reg, base + ".norm2", c);
      u.fc1 = make_linear(reg, base + ".fc1", c, c * cfg.mlp_ratio, rng);
      u.fc2 = make_linear(reg, base + ".fc2", c * cfg.mlp_ratio, c, rng);
      blocks.units.push_back(std::move(u));
    }
  }
  if (use_cpe) {
    blocks.cpe = make_conv(reg, prefix + ".cpe", c, c, 3, 1, 1, c, rng);
  }
  return blocks;
}

namespace {

Tensor run_unit(const Tensor& x, const BlockUnit& u) {
  const int64_t h = x.size(2), w = x.size(3);
  Tensor normed = to_grid(layernorm(to_tokens(x), u.norm1), h, w);
  Tensor attended = u.local ? lsa(normed, u.attn) : gsa(normed, u.attn);
  Tensor y = add(x, attended);

  Tensor tok = layernorm(to_tokens(y), u.norm2);
  Tensor hidden = gelu(linear(tok, u.fc1));
  Tensor mlp_out = to_grid(linear(hidden, u.fc2), h, w);
  return add(y, mlp_out);
}

}  // namespace

Tensor transformer_blocks(const Tensor& x, const StageBlocks& blocks) {
  Tensor y = x;
  for (size_t i = 0; i < blocks.units.size(); ++i) {
    y = run_unit(y, blocks.units[i]);
    if (i == 0 && blocks.use_cpe) {
      y = add(y, conv2d(y, blocks.cpe));
    }
  }
  return y;
}

}  // namespace mstwins
