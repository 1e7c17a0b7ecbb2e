#include <gtest/gtest.h>

#include <sstream>

#include "fixtures.hpp"
#include "psgrank/passage.hpp"

using namespace psgrank;

namespace {

Document doc_of(const std::string& text) { return analyze_document(Analyzer(), "d", text); }

}  // namespace

TEST(Segment, WindowsAreContiguousWithShortTail) {
    std::string text;
    for (int i = 0; i < 23; ++i) {
        text += "w" + std::to_string(i) + " ";
    }
    const auto d = doc_of(text);
    const auto ps = segment(d, SegmentationParams{SegmentationParams::Mode::window, 10});
    ASSERT_EQ(ps.size(), 3u);
    EXPECT_EQ(ps[0].length(), 10u);
    EXPECT_EQ(ps[2].length(), 3u);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        EXPECT_EQ(ps[i].ordinal, i);
        EXPECT_EQ(ps[i].passage_id, "d#" + std::to_string(i));
        if (i > 0) {
            EXPECT_EQ(ps[i].token_start, ps[i - 1].token_end);
        }
    }
    EXPECT_EQ(ps.back().token_end, d.length());
    EXPECT_EQ(text.substr(ps[1].chars.start, ps[1].chars.width()).substr(0, 3), "w10");
}

TEST(Segment, ExactMultipleHasNoEmptyTail) {
    const auto d = doc_of("a1 a2 a3 a4");
    EXPECT_EQ(segment(d, SegmentationParams{SegmentationParams::Mode::window, 2}).size(), 2u);
    EXPECT_EQ(segment(d, SegmentationParams{SegmentationParams::Mode::window, 300}).size(), 1u);
}

TEST(Segment, EmptyDocumentYieldsOneEmptyPassage) {
    const auto ps = segment(doc_of(""), SegmentationParams{});
    ASSERT_EQ(ps.size(), 1u);
    EXPECT_EQ(ps[0].length(), 0u);
    EXPECT_EQ(ps[0].chars.width(), 0u);
}

TEST(Segment, ZeroWindowIsRejected) {
    EXPECT_THROW(segment(doc_of("a b"), SegmentationParams{SegmentationParams::Mode::window, 0}), ValidationError);
}

TEST(Segment, SentenceMode) {
    const auto d = doc_of("One two. Three four five! Six? 3.5 seven");
    const auto ps = segment(d, SegmentationParams{SegmentationParams::Mode::sentence, 0});
    ASSERT_EQ(ps.size(), 4u);
    EXPECT_EQ(ps[0].length(), 2u);
    EXPECT_EQ(ps[1].length(), 3u);
    EXPECT_EQ(ps[2].length(), 1u);
    EXPECT_EQ(ps[3].length(), 3u);
}

TEST(PassageId, RoundTrips) {
    EXPECT_EQ(parse_passage_id(make_passage_id("a#b", 12)), (std::pair<std::string, std::size_t>{"a#b", 12}));
    EXPECT_THROW(parse_passage_id("nohash"), ValidationError);
    EXPECT_THROW(parse_passage_id("x#"), ValidationError);
}

TEST(Neighbors, EdgesFallBackToSelf) {
    const auto d = doc_of("a1 a2 a3 a4 a5");
    const auto ps = segment(d, SegmentationParams{SegmentationParams::Mode::window, 2});
    auto [pre0, fol0] = neighbors(ps, 0);
    EXPECT_EQ(pre0.ordinal, 0u);
    EXPECT_EQ(fol0.ordinal, 1u);
    auto [pre2, fol2] = neighbors(ps, 2);
    EXPECT_EQ(pre2.ordinal, 1u);
    EXPECT_EQ(fol2.ordinal, 2u);
}

TEST(CharOverlap, MergesOverlappingSpans) {
    Passage p;
    p.chars = CharRange{10, 30};
    const auto o = char_overlap(p, {{0, 12}, {11, 15}, {25, 40}, {50, 60}});
    EXPECT_EQ(o.overlap_chars, 5u + 5u);
    EXPECT_DOUBLE_EQ(o.fraction(), 0.5);
    EXPECT_EQ(merge_ranges({{5, 6}, {0, 2}, {2, 4}, {7, 7}}).size(), 2u);
}

TEST(Catalog, FindsPassagesAndWritesTsv) {
    const auto f = psgrank::testing::make_fixture(10, 7, false);
    std::size_t total = 0;
    for (const auto& d : f.store->documents()) {
        const auto ps = f.catalog->of_doc(d.doc_id);
        total += ps.size();
        const std::size_t want = d.length() == 0 ? 1 : (d.length() + 6) / 7;
        EXPECT_EQ(ps.size(), want);
        EXPECT_EQ(f.catalog->find(ps.back().passage_id), &ps.back());
    }
    EXPECT_EQ(f.catalog->total_passages(), total);
    EXPECT_EQ(f.catalog->find("doc100#9"), nullptr);
    EXPECT_EQ(f.catalog->find("nodoc#0"), nullptr);
    std::ostringstream out;
    f.catalog->write_tsv(out);
    const std::string tsv = out.str();
    EXPECT_EQ(static_cast<std::size_t>(std::count(tsv.begin(), tsv.end(), '\n')), total);
}
