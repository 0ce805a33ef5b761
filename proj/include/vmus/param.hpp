#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vmus/tensor.hpp"

namespace vmus {

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;  // always shaped like value
    bool trainable = true;

    void zero_grad() { grad.fill(0.0); }
};

struct ParamCounts {
    std::size_t trainable = 0;
    std::size_t frozen = 0;
    // Subtotals keyed by module prefix (text before the first '.').
    std::map<std::string, std::pair<std::size_t, std::size_t>> per_module;
};

// Owns every parameter of a model. Parameters keep a stable address for the
// lifetime of the store and iterate in registration order.
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;
    ParamStore(ParamStore&&) = default;
    ParamStore& operator=(ParamStore&&) = default;

    Param& add(std::string name, Tensor value, bool trainable = true);
    Param& get(std::string_view name);
    const Param& get(std::string_view name) const;
    Param* find(std::string_view name);
    const Param* find(std::string_view name) const;
    bool contains(std::string_view name) const { return find(name) != nullptr; }

    std::size_t size() const noexcept { return params_.size(); }
    std::vector<Param*> all();
    std::vector<const Param*> all() const;
    std::vector<Param*> with_prefix(std::string_view prefix);

    // Sets the trainable flag of every parameter whose name starts with prefix.
    std::size_t set_trainable(std::string_view prefix, bool trainable);
    void zero_grad();
    ParamCounts count() const;

    // FNV-1a over names and bytes of the selected parameters.
    std::uint64_t checksum(bool trainable_only, bool frozen_only) const;

private:
    std::vector<std::unique_ptr<Param>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace vmus
