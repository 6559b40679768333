export { renderInstruction } from "./templates.js";
export { ChatClient, TransportError } from "./chatClient.js";
export { generateVocab, parseWordResponse } from "./generateVocab.js";
export type { GenerationRequest, GenerationResult, VocabDocument } from "./generateVocab.js";
export {
  exportImageFeatures,
  exportTokenEmbeddings,
  loadTokenCheckpoint,
  meanPool,
  readEmbeddingFile,
  tokenizeWord,
  writeEmbeddingFile,
  KIND_IMAGE,
  KIND_TOKEN,
} from "./exportEmbeddings.js";
