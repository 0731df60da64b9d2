#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sg {

// Minimal streaming JSON writer. Keys keep insertion order and doubles print
// with 9 significant digits, so emitted artifacts are byte-stable across runs
// and diffable between them.
class JsonWriter {
public:
    std::string take() { return std::move(out_); }
    const std::string& str() const { return out_; }

    JsonWriter& begin_object() {
        comma();
        out_ += '{';
        first_.push_back(true);
        return *this;
    }
    JsonWriter& end_object() {
        out_ += '}';
        first_.pop_back();
        return *this;
    }
    JsonWriter& begin_array() {
        comma();
        out_ += '[';
        first_.push_back(true);
        return *this;
    }
    JsonWriter& end_array() {
        out_ += ']';
        first_.pop_back();
        return *this;
    }

    JsonWriter& key(std::string_view k) {
        comma();
        string_raw(k);
        out_ += ':';
        pending_value_ = true;
        return *this;
    }

    JsonWriter& value(double v) {
        comma();
        char buf[40];
        if (std::isfinite(v)) {
            std::snprintf(buf, sizeof buf, "%.9g", v);
            out_ += buf;
        } else {
            out_ += "null";
        }
        return *this;
    }
    JsonWriter& value(std::int64_t v) {
        comma();
        out_ += std::to_string(v);
        return *this;
    }
    JsonWriter& value(std::uint64_t v) {
        comma();
        out_ += std::to_string(v);
        return *this;
    }
    JsonWriter& value(int v) { return value(std::int64_t(v)); }
    JsonWriter& value(bool v) {
        comma();
        out_ += v ? "true" : "false";
        return *this;
    }
    JsonWriter& value(std::string_view s) {
        comma();
        string_raw(s);
        return *this;
    }
    JsonWriter& value(const char* s) { return value(std::string_view(s)); }
    JsonWriter& null_value() {
        comma();
        out_ += "null";
        return *this;
    }

    template <typename T>
    JsonWriter& kv(std::string_view k, T v) {
        key(k);
        return value(v);
    }

    JsonWriter& number_array(std::span<const double> xs) {
        begin_array();
        for (double x : xs) value(x);
        return end_array();
    }

private:
    void comma() {
        if (pending_value_) {
            pending_value_ = false;
            return;
        }
        if (!first_.empty()) {
            if (!first_.back()) out_ += ',';
            first_.back() = false;
        }
    }
    void string_raw(std::string_view s) {
        out_ += '"';
        for (char c : s) {
            switch (c) {
                case '"': out_ += "\\\""; break;
                case '\\': out_ += "\\\\"; break;
                case '\n': out_ += "\\n"; break;
                case '\r': out_ += "\\r"; break;
                case '\t': out_ += "\\t"; break;
                default:
                    if (static_cast<unsigned char>(c) < 0x20) {
                        char buf[8];
                        std::snprintf(buf, sizeof buf, "\\u%04x", c);
                        out_ += buf;
                    } else {
                        out_ += c;
                    }
            }
        }
        out_ += '"';
    }

    std::string out_;
    std::vector<bool> first_;
    bool pending_value_ = false;
};

}  // namespace sg
