#pragma once

#include <array>
#include <string>
#include <vector>

struct ParserCase {
    const char* name;
    std::string response;
    bool accept;
    // Expected labels (mean, vol, shape, lag) when accepted, otherwise a
    // fragment the error message must contain.
    std::array<const char*, 4> labels;
    const char* error_fragment;
};

inline std::vector<ParserCase> parser_cases()
{
    const std::array<const char*, 4> canonical = {"mild-rise", "stable", "trough", "late"};
    const std::array<const char*, 4> none = {"", "", "", ""};
    return {
        {"exact format", "Mean Shift: mild-rise\nVolatility: stable\nShape: trough\nLag: late\n", true, canonical, ""},
        {"no trailing newline", "Mean Shift: mild-rise\nVolatility: stable\nShape: trough\nLag: late", true, canonical, ""},
        {"upper case values", "Mean Shift: MILD-RISE\nVolatility: STABLE\nShape: TROUGH\nLag: LATE\n", true, canonical, ""},
        {"mixed case keys", "mean shift: Mild-Rise\nVOLATILITY: Stable\nshape: Trough\nLAG: Late\n", true, canonical, ""},
        {"extra whitespace", "  Mean Shift :   mild-rise  \n\tVolatility:stable\nShape:  trough\t\nLag:late  \n", true, canonical, ""},
        {"reordered lines", "Lag: late\nShape: trough\nVolatility: stable\nMean Shift: mild-rise\n", true, canonical, ""},
        {"preamble and blank lines",
         "Here is my analysis.\n\nMean Shift: mild-rise\nVolatility: stable\n\nShape: trough\nLag: late\nDone.\n", true,
         canonical, ""},
        {"angle brackets", "Mean Shift: <mild-rise>\nVolatility: <stable>\nShape: <trough>\nLag: <late>\n", true, canonical,
         ""},
        {"crlf line endings", "Mean Shift: mild-rise\r\nVolatility: stable\r\nShape: trough\r\nLag: late\r\n", true,
         canonical, ""},
        {"other labels", "Mean Shift: strong-drop\nVolatility: calm\nShape: oscillate\nLag: early-persist\n", true,
         {"strong-drop", "calm", "oscillate", "early-persist"}, ""},
        {"missing lag", "Mean Shift: mild-rise\nVolatility: stable\nShape: trough\n", false, none, "missing key 'Lag'"},
        {"missing mean shift", "Volatility: stable\nShape: trough\nLag: late\n", false, none, "missing key 'Mean Shift'"},
        {"empty response", "", false, none, "missing key"},
        {"duplicate shape", "Mean Shift: mild-rise\nVolatility: stable\nShape: trough\nShape: peak\nLag: late\n", false, none,
         "duplicate key 'Shape' at line 4"},
        {"duplicate identical", "Mean Shift: mild-rise\nMean Shift: mild-rise\nVolatility: stable\nShape: trough\nLag: late\n",
         false, none, "duplicate key 'Mean Shift' at line 2"},
        {"out-of-domain shape", "Mean Shift: mild-rise\nVolatility: stable\nShape: zigzag\nLag: late\n", false, none,
         "out-of-domain value 'zigzag' at line 3"},
        {"label from another kind", "Mean Shift: surge\nVolatility: stable\nShape: trough\nLag: late\n", false, none,
         "out-of-domain value 'surge' at line 1"},
        {"empty value", "Mean Shift: mild-rise\nVolatility:\nShape: trough\nLag: late\n", false, none,
         "out-of-domain value '' at line 2"},
        {"misspelled key", "Mean Shift: mild-rise\nVolatilty: stable\nShape: trough\nLag: late\n", false, none,
         "missing key 'Volatility'"},
        {"trailing words", "Mean Shift: mild-rise\nVolatility: stable\nShape: trough\nLag: late onset\n", false, none,
         "out-of-domain value 'late onset' at line 4"},
    };
}
