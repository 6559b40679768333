/**
 * Instruction templates for attribute-word generation.
 *
 * Substitution is literal: the word count is inserted as-is with no grammar
 * fixing, and the four-line `word` tail is a fixed formatting example for
 * the model, independent of the requested count.
 */

const FORMAT_TAIL = "\nword\nword\nword\nword";

export function renderInstruction(
  dataset: string,
  className: string,
  numWords: number,
  withImages: boolean,
): string {
  if (withImages) {
    return (
      `Please take a look at this(these) image file(s) and provide only ${numWords} ` +
      `descriptive English words for the ${dataset} ${className} dataset. ` +
      `Format your response as follows:${FORMAT_TAIL}`
    );
  }
  return (
    `Please provide only ${numWords} descriptive English words for the ` +
    `${dataset} ${className} dataset. Format your response as follows: ${FORMAT_TAIL}`
  );
}
