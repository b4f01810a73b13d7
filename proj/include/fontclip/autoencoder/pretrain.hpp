#pragma once

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "../common/log.hpp"
#include "../common/random.hpp"
#include "adam.hpp"
#include "autoencoder.hpp"

namespace fontclip {

class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PretrainResult {
    GlyphAutoencoder<float> model;
    std::vector<double> train_loss;  ///< per-epoch mean L1
    std::vector<double> val_loss;    ///< empty without a validation set
    int best_epoch = -1;             ///< epoch whose weights were kept (0-based)
};

template <typename Scalar>
double mean_l1(const GlyphAutoencoder<Scalar>& model, std::span<const GlyphStack* const> stacks, std::size_t chunk = 32) {
    if (stacks.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < stacks.size(); i += chunk) {
        const auto part = stacks.subspan(i, std::min(chunk, stacks.size() - i));
        const auto x = to_feature_map<Scalar>(part);
        total += l1_loss(model.reconstruct(x), x) * static_cast<double>(part.size());
    }
    return total / static_cast<double>(stacks.size());
}

/// Trains the autoencoder with Adam on mean L1 reconstruction loss. With a
/// validation set, stops after `patience` epochs without improvement and
/// returns the best-validation weights.
inline PretrainResult pretrain_autoencoder(std::span<const GlyphStack* const> train,
                                           const AutoencoderConfig& config,
                                           std::span<const GlyphStack* const> val = {}) {
    if (train.empty()) throw std::invalid_argument("pretraining needs at least one stack");
    config.validate();
    PretrainResult result{GlyphAutoencoder<float>(config), {}, {}, -1};
    auto& model = result.model;
    nn::Adam<float> adam(model.parameters(), {.learning_rate = config.learning_rate});
    Rng rng(mix_seed(config.seed, 12));
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    GlyphAutoencoder<float> best = model;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;
    const auto batch = static_cast<std::size_t>(config.batch_size);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle(order, rng);
        double sum = 0.0;
        for (std::size_t i = 0; i < order.size(); i += batch) {
            std::vector<const GlyphStack*> items;
            for (std::size_t j = i; j < std::min(i + batch, order.size()); ++j) items.push_back(train[order[j]]);
            adam.zero_grad();
            const double loss = model.accumulate_gradients(to_feature_map<float>(items));
            if (!std::isfinite(loss)) {
                std::ostringstream os;
                os << "autoencoder loss diverged (non-finite) in epoch " << epoch + 1;
                throw DivergenceError(os.str());
            }
            adam.step();
            sum += loss * static_cast<double>(items.size());
        }
        result.train_loss.push_back(sum / static_cast<double>(train.size()));
        if (val.empty()) {
            result.best_epoch = epoch;
            continue;
        }
        const double v = mean_l1(model, val);
        result.val_loss.push_back(v);
        if (!std::isfinite(v)) throw DivergenceError("validation loss non-finite in epoch " + std::to_string(epoch + 1));
        if (v < best_val) {
            best_val = v;
            best = model;
            result.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            log::info("early stopping after epoch " + std::to_string(epoch + 1));
            break;
        }
    }
    if (!val.empty()) result.model = std::move(best);
    return result;
}

}  // namespace fontclip
