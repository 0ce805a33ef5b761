#include "vmus/param.hpp"

#include <cstring>

#include "vmus/error.hpp"

namespace vmus {

Param& ParamStore::add(std::string name, Tensor value, bool trainable) {
    if (index_.contains(name)) throw InvalidArgument("duplicate parameter name '" + name + "'");
    if (!value.all_finite()) throw NumericError("non-finite initial value for parameter '" + name + "'");
    auto p = std::make_unique<Param>();
    p->name = name;
    p->grad = Tensor(value.shape());
    p->value = std::move(value);
    p->trainable = trainable;
    index_.emplace(std::move(name), params_.size());
    params_.push_back(std::move(p));
    return *params_.back();
}

Param* ParamStore::find(std::string_view name) {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : params_[it->second].get();
}

const Param* ParamStore::find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : params_[it->second].get();
}

Param& ParamStore::get(std::string_view name) {
    Param* p = find(name);
    if (!p) throw InvalidArgument("unknown parameter '" + std::string(name) + "'");
    return *p;
}

const Param& ParamStore::get(std::string_view name) const {
    const Param* p = find(name);
    if (!p) throw InvalidArgument("unknown parameter '" + std::string(name) + "'");
    return *p;
}

std::vector<Param*> ParamStore::all() {
    std::vector<Param*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

std::vector<const Param*> ParamStore::all() const {
    std::vector<const Param*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.get());
    return out;
}

std::vector<Param*> ParamStore::with_prefix(std::string_view prefix) {
    std::vector<Param*> out;
    for (auto& p : params_) {
        if (p->name.starts_with(prefix)) out.push_back(p.get());
    }
    return out;
}

std::size_t ParamStore::set_trainable(std::string_view prefix, bool trainable) {
    std::size_t n = 0;
    for (auto& p : params_) {
        if (p->name.starts_with(prefix)) {
            p->trainable = trainable;
            ++n;
        }
    }
    return n;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

ParamCounts ParamStore::count() const {
    ParamCounts c;
    for (const auto& p : params_) {
        const std::string module = p->name.substr(0, p->name.find('.'));
        auto& sub = c.per_module[module];
        if (p->trainable) {
            c.trainable += p->value.size();
            sub.first += p->value.size();
        } else {
            c.frozen += p->value.size();
            sub.second += p->value.size();
        }
    }
    return c;
}

std::uint64_t ParamStore::checksum(bool trainable_only, bool frozen_only) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* bytes, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(bytes);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& p : params_) {
        if (trainable_only && !p->trainable) continue;
        if (frozen_only && p->trainable) continue;
        mix(p->name.data(), p->name.size());
        mix(p->value.data(), p->value.size() * sizeof(double));
    }
    return h;
}

}  // namespace vmus
