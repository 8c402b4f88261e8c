#pragma once
// Patch embedding: turns cropped images into positioned token sequences and
// maps search tokens back to a 2D feature map.

#include <memory>
#include <vector>

#include "grm/tensor.hpp"

namespace grm {

struct PatchConfig {
    int patch = 8;
    int embed_dim = 64;
    int template_size = 32;
    int search_size = 64;

    void validate() const {
        if (patch <= 0 || embed_dim <= 0 || template_size <= 0 || search_size <= 0)
            throw ConfigError("patch config: all sizes must be positive");
        if (template_size % patch != 0 || search_size % patch != 0)
            throw ConfigError("patch config: patch size must divide template and search sizes");
    }

    int grid_z() const { return template_size / patch; }
    int grid_x() const { return search_size / patch; }
    int n_z() const { return grid_z() * grid_z(); }
    int n_x() const { return grid_x() * grid_x(); }
    int patch_dim() const { return 3 * patch * patch; }
};

enum class TokenOrigin { tmpl, search };

struct TokenBuffer {
    Tensor tokens;  // {N, C}
    TokenOrigin origin = TokenOrigin::search;
    int rows = 0;
    int cols = 0;
};

// Rows are patches in row-major patch order; each row is the patch flattened
// channel-major, i.e. (channel, y, x).
inline Tensor patchify(const Tensor& image, int patch) {
    if (image.ndim() != 3 || image.shape[0] != 3)
        throw ShapeError("patchify: expected image {3,H,W}, got " + shape_str(image.shape));
    const int h = image.shape[1], w = image.shape[2];
    if (patch <= 0 || h % patch != 0 || w % patch != 0)
        throw ShapeError("patchify: patch size " + std::to_string(patch) + " does not divide " + shape_str(image.shape));
    const int gr = h / patch, gc = w / patch;
    const int n = gr * gc, d = 3 * patch * patch;
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(static_cast<std::size_t>(n) * d);
    for (int pr = 0; pr < gr; ++pr)
        for (int pc = 0; pc < gc; ++pc)
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < patch; ++y)
                    for (int x = 0; x < patch; ++x)
                        idx->push_back((static_cast<std::int64_t>(c) * h + (pr * patch + y)) * w + (pc * patch + x));
    return gather(image, std::move(idx), {n, d});
}

inline TokenBuffer embed_tokens(const Tensor& patches, const Tensor& proj_w, const Tensor& proj_b,
                                const Tensor& pos, TokenOrigin origin, int rows, int cols) {
    const int n = patches.rows();
    if (rows * cols != n)
        throw ShapeError("embed_tokens: spatial grid does not cover the token count");
    if (pos.ndim() != 2 || pos.shape[0] != n || pos.shape[1] != proj_w.cols())
        throw ShapeError("embed_tokens: position embedding " + shape_str(pos.shape) +
                         " does not match tokens {" + std::to_string(n) + "," + std::to_string(proj_w.cols()) + "}");
    TokenBuffer buf;
    buf.tokens = add(linear(patches, proj_w, proj_b), pos);
    buf.origin = origin;
    buf.rows = rows;
    buf.cols = cols;
    return buf;
}

// {N, C} -> {C, rows, cols}; token (r, c) lands at map[:, r, c].
inline Tensor tokens_to_map(const TokenBuffer& buf) {
    if (buf.origin != TokenOrigin::search)
        throw std::invalid_argument("tokens_to_map: only search tokens are reshaped to a feature map");
    const int n = buf.tokens.rows(), c = buf.tokens.cols();
    if (buf.rows * buf.cols != n)
        throw ShapeError("tokens_to_map: grid does not cover the token count");
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(static_cast<std::size_t>(n) * c);
    for (int ch = 0; ch < c; ++ch)
        for (int r = 0; r < buf.rows; ++r)
            for (int cc = 0; cc < buf.cols; ++cc)
                idx->push_back(static_cast<std::int64_t>(r * buf.cols + cc) * c + ch);
    return gather(buf.tokens, std::move(idx), {c, buf.rows, buf.cols});
}

}  // namespace grm
