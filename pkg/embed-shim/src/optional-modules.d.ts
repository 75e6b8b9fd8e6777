// optional backend dependency, resolved only at runtime if installed
declare module "@xenova/transformers";
