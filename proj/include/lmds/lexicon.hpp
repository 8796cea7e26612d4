#pragma once

#include <array>
#include <string_view>

namespace lmds::lexicon {

// Marker words planted into synthetic strata. The lexical mock labeler reads
// the same lists, so on synthetic corpora it recovers the planted stratum from
// text alone.
inline constexpr std::array<std::string_view, 24> kHighQuality = {
    "theorem",    "derivation", "hypothesis", "experiment",  "lecture",     "equation",
    "proof",      "molecule",   "historiography", "syllabus", "empirical",  "curriculum",
    "photosynthesis", "algorithm", "manuscript", "thermodynamics", "lemma", "archaeology",
    "citation",   "textbook",   "chromosome", "integral",    "philosophy",  "treatise"};

inline constexpr std::array<std::string_view, 24> kLowQuality = {
    "click",    "subscribe", "casino",   "giveaway", "lol",      "viral",
    "discount", "coupon",    "promo",    "bonus",    "jackpot",  "followers",
    "unlock",   "limited",   "cheap",    "sexy",     "winner",   "omg",
    "clickbait", "deal",     "signup",   "spam",     "hottest",  "prize"};

}  // namespace lmds::lexicon
