#include "bip/textgen.hpp"

#include <array>
#include <cctype>
#include <span>
#include <string_view>
#include <vector>

#include "bip/rng.hpp"

namespace bip::textgen {

namespace {

using Words = std::span<const std::string_view>;

constexpr std::string_view kNames[] = {
    "Anna", "Tom", "Clara", "Peter", "Mary", "John", "Elena", "Marcus", "Ruth", "Samuel",
    "Lucy", "Daniel", "Grace", "Henry", "Alice", "Oliver", "Nora", "Walter", "Ida", "Felix"};
constexpr std::string_view kNouns[] = {
    "house", "river", "village", "garden", "road", "door", "window", "letter", "book", "table",
    "market", "child", "woman", "man", "teacher", "doctor", "farmer", "king", "ship", "city",
    "tree", "hill", "storm", "horse", "dog", "bird", "friend", "mother", "father", "brother",
    "sister", "morning", "evening", "night", "winter", "summer", "school", "church", "bridge", "field",
    "kitchen", "fire", "lamp", "voice", "story", "song", "question", "answer", "train", "station",
    "forest", "mountain", "stone", "wall", "boat", "coat", "hat", "bread", "water", "money"};
constexpr std::string_view kPluralNouns[] = {
    "houses", "rivers", "people", "children", "letters", "books", "trees", "birds", "friends",
    "streets", "stories", "questions", "windows", "horses", "ships", "hills", "fields", "days",
    "years", "hands", "eyes", "words", "men", "women", "doors", "lights", "voices", "flowers"};
constexpr std::string_view kAdjectives[] = {
    "old", "small", "little", "large", "quiet", "dark", "bright", "cold", "warm", "young",
    "long", "short", "green", "white", "black", "red", "strange", "happy", "sad", "empty",
    "heavy", "narrow", "wide", "gentle", "careful", "tired", "busy", "new", "early", "late"};
constexpr std::string_view kVerbsPast[] = {
    "saw", "found", "took", "made", "gave", "left", "kept", "held", "brought", "heard",
    "opened", "closed", "watched", "followed", "carried", "wanted", "needed", "painted", "built", "remembered",
    "asked", "called", "visited", "noticed", "pulled", "pushed", "wrote", "read", "bought", "lost"};
constexpr std::string_view kVerbsIntrans[] = {
    "walked", "waited", "smiled", "laughed", "slept", "stopped", "listened", "arrived", "returned",
    "sat", "stood", "ran", "spoke", "worked", "cried", "paused", "turned", "wondered", "rested"};
constexpr std::string_view kSayVerbs[] = {"said", "thought", "knew", "believed", "told them", "remembered", "felt"};
constexpr std::string_view kAdverbs[] = {
    "slowly", "quickly", "quietly", "again", "suddenly", "carefully", "softly", "finally", "once",
    "often", "never", "always", "almost", "still", "together", "away", "home", "outside"};
constexpr std::string_view kPrepositions[] = {
    "in", "on", "near", "under", "behind", "across", "through", "over", "beside", "into", "from", "toward", "along"};
constexpr std::string_view kDeterminers[] = {"the", "the", "a", "his", "her", "their", "that", "this", "every", "one"};
constexpr std::string_view kPluralDets[] = {"the", "some", "many", "their", "those", "two", "three", "few"};
constexpr std::string_view kConjunctions[] = {"and", "but", "so", "because", "while", "when", "although", "until"};
constexpr std::string_view kTimes[] = {
    "In the morning", "That evening", "After a while", "Later", "Before long", "At last",
    "The next day", "For a moment", "Long ago", "Every spring", "Then", "Soon"};
constexpr std::string_view kInterjections[] = {"Yes", "No", "Well", "Oh", "Look", "Listen", "Come here", "Wait"};

class Writer {
 public:
  explicit Writer(std::uint64_t seed) : rng_(seed, "textgen") {}

  std::string paragraph() {
    std::string p;
    const std::size_t n = 2 + rng_.below(5);
    for (std::size_t i = 0; i < n; ++i) {
      if (!p.empty()) p += ' ';
      p += rng_.uniform() < 0.15 ? dialogue() : sentence();
    }
    return p + "\n\n";
  }

 private:
  // Zipf-like choice: weight 1/(rank + 1).
  std::string_view pick(Words w) {
    double total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) total += 1.0 / static_cast<double>(i + 1);
    double u = rng_.uniform() * total;
    for (std::size_t i = 0; i < w.size(); ++i) {
      u -= 1.0 / static_cast<double>(i + 1);
      if (u < 0.0) return w[i];
    }
    return w.back();
  }

  bool chance(double p) { return rng_.uniform() < p; }

  std::string noun_phrase() {
    if (chance(0.2)) return std::string(pick(kNames));
    std::string s;
    if (chance(0.25)) {
      s = std::string(pick(kPluralDets)) + " ";
      if (chance(0.4)) s += std::string(pick(kAdjectives)) + " ";
      return s + std::string(pick(kPluralNouns));
    }
    std::string_view det = pick(kDeterminers);
    std::string adj = chance(0.4) ? std::string(pick(kAdjectives)) : std::string();
    std::string_view noun = pick(kNouns);
    const char first = adj.empty() ? noun[0] : adj[0];
    if (det == "a" && std::string_view("aeiou").find(first) != std::string_view::npos) det = "an";
    s = std::string(det) + " ";
    if (!adj.empty()) s += adj + " ";
    return s + std::string(noun);
  }

  std::string prep_phrase() { return std::string(pick(kPrepositions)) + " " + noun_phrase(); }

  std::string clause(int depth) {
    std::string s = noun_phrase() + " ";
    const double r = rng_.uniform();
    if (r < 0.45) {
      s += std::string(pick(kVerbsPast)) + " " + noun_phrase();
    } else if (r < 0.75 || depth > 1) {
      s += std::string(pick(kVerbsIntrans));
      if (chance(0.4)) s += " " + std::string(pick(kAdverbs));
    } else {
      s += std::string(pick(kSayVerbs)) + " that " + clause(depth + 1);
    }
    if (chance(0.35)) s += " " + prep_phrase();
    return s;
  }

  static std::string capitalize(std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
  }

  std::string sentence() {
    std::string s;
    if (chance(0.2)) s = std::string(pick(kTimes)) + ", ";
    s += clause(0);
    if (chance(0.3)) {
      std::string_view c = pick(kConjunctions);
      s += (c == "and" || c == "but" || c == "so") ? ", " : " ";
      s += std::string(c) + " " + clause(1);
    }
    return capitalize(s) + (chance(0.06) ? "?" : ".");
  }

  std::string dialogue() {
    std::string inner = chance(0.4) ? std::string(pick(kInterjections)) + ", " + clause(1) : clause(1);
    return "\"" + capitalize(inner) + (chance(0.3) ? "?" : ",") + "\" " + std::string(pick(kNames)) + " " +
           (chance(0.6) ? "said" : "asked") + ".";
  }

  Rng rng_;
};

}  // namespace

std::string generate(std::size_t n_bytes, std::uint64_t seed) {
  Writer w(seed);
  std::string out;
  out.reserve(n_bytes + 4096);
  while (out.size() < n_bytes) out += w.paragraph();
  out.resize(n_bytes);
  return out;
}

}  // namespace bip::textgen
