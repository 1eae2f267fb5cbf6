#pragma once

// Prompt templates, version 1. Each constant is byte-identical to the asset
// file of the same name under assets/prompts/v1/ (checked by the prompt tests).

#include <string_view>

namespace fivl::prompts {

inline constexpr int kVersion = 1;

// extraction_training.txt
inline constexpr std::string_view kExtractionTraining = R"PROMPT(A multimodal instruction-following dataset used for visual instruction tuning and it contains an image and a conversation. The conversation is constructed from a few turns of questions and answers regarding the image.

Given only a question and answer pair: identify short expressions from the answer which could not be generated without the image. 

The expression 
- expresses a visual content from the image.
- should be as short as possible.
- should not be longer than 4 words
- should not include punctuation
- should no include reference to the image
Unrelated expressions should be separated by the following string: ":::"

Don't add any additional information to the prompt.

For example:

Q: What are the giraffes doing in the image? <image>

A: The baby giraffe is walking next to the mother giraffe, both moving through the open area of their enclosure

The output should be as following:

baby giraffe:::mother giraffe :::open area of their enclosure

Identify the tokens for the following:

Q: {question} 

A: {answer}
)PROMPT";

// extraction_eval.txt
inline constexpr std::string_view kExtractionEval = R"PROMPT(A multimodal instruction-following dataset used for visual instruction tuning and it contains an image and a conversation. The conversation is constructed from a few turns of questions and answers regarding the image.

Given only a question and answer pair: identify short expressions from the answer or the question which could not be generated without the image.

The expression
- should hypothetically express an immediate visual content from image. Thus, yes/no is NOT an expected expression, and some pronouns like "this", "that", "there", and "those" are not expected expressions.
- should be as short as possible. 
- should not be longer than 4 words.
- should not include punctuations.
- should not include reference to the image, like: "the man wearing a blue suit in the image" it should be: "man wearing blue suit".

Unrelated expressions should be separated by the following string: ":::".

If there is no expressions found, your response must be "N/A".

Do not add any additional information to the prompt.

<EXAMPLES>

Identify the expressions for the following:
Q: "{question}"
A: "{answer}"
)PROMPT";

// examples_vqav2.txt
inline constexpr std::string_view kExamplesVqaV2 = R"PROMPT(Example 1:

Q: "Considering the limited space and packed fixtures, what suggestions can be provided for organizing the bathroom to optimize its use?"

A: "To optimize the use of the small bathroom with tightly packed fixtures, there are some organization solutions that can be recommended: 
Install wall-mounted storage: By using vertical space on the walls and areas above the toilet, you can create additional storage for toiletries and other bathroom essentials without taking up floor space.
Utilize narrow shelves or over-the-door organizers: Placing narrow shelves or over-the-door organizers on available narrow spaces can help with the organization of toiletries and other small items. 
Use multi-functional items: Opt for items that serve more than one purpose, such as a toilet paper holder with a shelf or a mirror with built-in storage. Opt for compact accessories: Choose smaller or more compact versions of bathroom essentials, like toothbrush holders or soap dishes, to maximize space on countertops and around the sink. Declutter regularly: Frequently assess your bathroom supplies and remove any items that are not in use or have expired to keep the bathroom tidy and make the most of the limited space. By following these suggestions, the bathroom can appear less cluttered, and occupants can make better use of the available space."

Key Expressions: small bathroom:::tightly packed fixtures:::vertical space on the walls:::areas above the toilet:::over-the-door organizers:::narrow spaces:::space on countertops and around the sink

Example 2:

Q: "How  many shadows are on the ground?"

A: "3"

Key Expressions:shadows:::3
)PROMPT";

// examples_gqa_pope.txt
inline constexpr std::string_view kExamplesGqaPope = R"PROMPT(Example 1:

Q: "Considering the limited space and packed fixtures, what suggestions can be provided for organizing the bathroom to optimize its use?"

A: "To optimize the use of the small bathroom with tightly packed fixtures, there are some organization solutions that can be recommended: 
Install wall-mounted storage: By using vertical space on the walls and areas above the toilet, you can create additional storage for toiletries and other bathroom essentials without taking up floor space.
Utilize narrow shelves or over-the-door organizers: Placing narrow shelves or over-the-door organizers on available narrow spaces can help with the organization of toiletries and other small items. Use multi-functional items: Opt for items that serve more than one purpose, such as a toilet paper holder with a shelf or a mirror with built-in storage. Opt for compact accessories: Choose smaller or more compact versions of bathroom essentials, like toothbrush holders or soap dishes, to maximize space on countertops and around the sink. Declutter regularly: Frequently assess your bathroom supplies and remove any items that are not in use or have expired to keep the bathroom tidy and make the most of the limited space. By following these suggestions, the bathroom can appear less cluttered, and occupants can make better use of the available space."

Key Expressions: small bathroom:::tightly packed fixtures:::vertical space on the walls:::areas above the toilet:::over-the-door organizers:::narrow spaces:::space on countertops and around the sink

Example 2:

Q: "Is there a snowboard in the image?"

A: "no"

Key Expressions: snowboard
)PROMPT";

// judge_seg1.txt
inline constexpr std::string_view kJudgeSeg1 = R"PROMPT(You are given a part of the image and a word/phrase, do you think this is a good segmentation that the given part of the image covers this word/phrase?

Word/phrase: {word}

Answer only "yes" or "no".
)PROMPT";

// judge_seg2.txt
inline constexpr std::string_view kJudgeSeg2 = R"PROMPT(You are given a part of the image and a word/phrase, do you see any part of the image that is related to the word? 

Word/phrase: {word}

Answer only "yes" or "no".
)PROMPT";

// judge_keyword.txt
inline constexpr std::string_view kJudgeKeyword = R"PROMPT(You are given a question, a word/phrase and an image. Please rate the importance degree from 0-10 scale ([OID]). 
Note that
 - 0 means not important at all and 10 means very important. 
 - Important word/phrase means that this word/phrase is closely related to the image and the question, and it could not be evoked without the use of the image (IR).
 - If the question does not related to the image, in other words, the answer does not depend on the image content, then any words are not important. 

Question: {question}

A word: {word} 

Only answer important or not important, and the importance degree from 0-10?
)PROMPT";

}  // namespace fivl::prompts
