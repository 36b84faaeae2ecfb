#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace xccd {

// Character-level tokenizer for the toy backend. Letters fold to lowercase;
// the literals "Yes" and "No" are greedy-matched to dedicated single tokens so
// the label-probability comparison can be exercised in its singleton form.
// Vocabulary size is exactly 64.
class CharTokenizer {
public:
    CharTokenizer();

    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;
    static constexpr int kYes = 4;
    static constexpr int kNo = 5;

    int vocab_size() const { return static_cast<int>(pieces_.size()); }

    std::vector<int> encode(std::string_view text) const;

    // Decodes token pieces; pad/bos/unk render as nothing, eos stops decoding.
    std::string decode(const std::vector<int>& ids) const;

    const std::string& piece(int id) const { return pieces_.at(static_cast<std::size_t>(id)); }

private:
    std::vector<std::string> pieces_;
    std::map<char, int> char_to_id_;
};

}  // namespace xccd
